use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{rng::Rng, Tensor};

/// Handle to one entry of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Adam first moment.
    pub m: Tensor,
    /// Adam second moment.
    pub v: Tensor,
}

/// Named learnable tensors with their gradient accumulators and Adam state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let shape = value.shape().to_vec();
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        Ok(ParamId(id))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    /// Glorot-uniform matrix: entries in `±sqrt(6 / (rows + cols))`.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut Rng) -> Result<ParamId> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::new(vec![rows, cols], values)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        self.params[id.0].value.values()
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].grad.values_mut()
    }

    /// Borrow a parameter's value and its gradient at once.
    pub fn value_and_grad(&mut self, id: ParamId) -> (&[f64], &mut [f64]) {
        let p = &mut self.params[id.0];
        (p.value.values(), p.grad.values_mut())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sq_norm()).sum::<f64>().sqrt()
    }

    /// Scales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let scale = max_norm / norm;
            for p in &mut self.params {
                p.grad.values_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    /// Multiplies every accumulated gradient by `factor`.
    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.values_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// First parameter whose gradient holds a NaN or infinity.
    pub fn first_non_finite_grad(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| !p.grad.all_finite())
            .map(|p| p.name.as_str())
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            step: self.step,
            params: self
                .params
                .iter()
                .map(|p| ParamSnapshot {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.values().to_vec(),
                    adam_m: p.m.values().to_vec(),
                    adam_v: p.v.values().to_vec(),
                })
                .collect(),
        }
    }

    /// Copies values and Adam state from `snap` into an already laid-out
    /// store. Every parameter of the store must appear in the snapshot with
    /// the same shape.
    pub fn load_snapshot(&mut self, snap: &StoreSnapshot) -> Result<()> {
        let by_name: BTreeMap<&str, &ParamSnapshot> = snap.params.iter().map(|p| (p.name.as_str(), p)).collect();
        if by_name.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "checkpoint holds {} parameters, model expects {}",
                by_name.len(),
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let s = by_name
                .get(p.name.as_str())
                .ok_or_else(|| Error::Validation(format!("checkpoint is missing parameter `{}`", p.name)))?;
            if s.shape != p.value.shape() {
                return Err(Error::Validation(format!(
                    "parameter `{}` has shape {:?} in checkpoint, model expects {:?}",
                    p.name,
                    s.shape,
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(s.shape.clone(), s.values.clone())?;
            p.m = Tensor::new(s.shape.clone(), s.adam_m.clone())?;
            p.v = Tensor::new(s.shape.clone(), s.adam_v.clone())?;
            p.grad.fill(0.0);
        }
        self.step = snap.step;
        Ok(())
    }
}

/// Serializable image of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub step: u64,
    pub params: Vec<ParamSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng::seeded;

    #[test]
    fn glorot_within_limit_and_shapes_shared() {
        let mut store = ParamStore::new();
        let id = store.add_glorot("w", 4, 6, &mut seeded(1)).unwrap();
        let limit = (6.0f64 / 10.0).sqrt();
        assert!(store.values(id).iter().all(|v| v.abs() <= limit));
        let p = store.param(id);
        assert_eq!(p.grad.shape(), p.value.shape());
        assert_eq!(p.m.shape(), p.value.shape());
        assert_eq!(p.v.shape(), p.value.shape());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add_zeros("b", &[3]).unwrap();
        assert!(store.add_zeros("b", &[3]).is_err());
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut store = ParamStore::new();
        let id = store.add_zeros("b", &[2]).unwrap();
        store.grad_mut(id).copy_from_slice(&[3.0, 4.0]);
        assert_eq!(store.clip_grad_norm(1.0), 5.0);
        assert!((store.grad_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_round_trip_rejects_shape_mismatch() {
        let mut store = ParamStore::new();
        store.add_glorot("w", 2, 3, &mut seeded(2)).unwrap();
        let snap = store.snapshot();
        let mut other = ParamStore::new();
        other.add_zeros("w", &[2, 3]).unwrap();
        other.load_snapshot(&snap).unwrap();
        assert_eq!(other, store);
        let mut bad = ParamStore::new();
        bad.add_zeros("w", &[3, 2]).unwrap();
        assert!(bad.load_snapshot(&snap).is_err());
    }
}
