use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ParamStore;

/// Denominator floor for relative errors, so components whose analytic and
/// numeric values are both ~0 are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub scalars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients with central differences.
///
/// `forward_backward` must compute the loss from the store's current values
/// and accumulate its gradient into the store's gradient buffers. It is
/// evaluated twice up front; any difference in loss or gradient between the
/// two evaluations is reported as a contract error.
pub fn gradient_check<F>(store: &mut ParamStore, eps: f64, mut forward_backward: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    store.zero_grad();
    let loss = forward_backward(store)?;
    let analytic: Vec<Vec<f64>> = store.params().iter().map(|p| p.grad.values().to_vec()).collect();
    store.zero_grad();
    let again = forward_backward(store)?;
    let repeat_grads_match = store
        .params()
        .iter()
        .zip(&analytic)
        .all(|(p, a)| p.grad.values().iter().zip(a).all(|(x, y)| x.to_bits() == y.to_bits()));
    if loss.to_bits() != again.to_bits() || !repeat_grads_match {
        return Err(Error::Contract("forward closure is not deterministic".into()));
    }

    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for (id, analytic) in ids.into_iter().zip(&analytic) {
        let mut worst: f64 = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let original = store.values(id)[i];
            store.value_mut(id).values_mut()[i] = original + eps;
            let plus = forward_backward(store)?;
            store.value_mut(id).values_mut()[i] = original - eps;
            let minus = forward_backward(store)?;
            store.value_mut(id).values_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(a, numeric));
        }
        store.zero_grad();
        params.push(ParamCheck {
            name: store.name(id).to_string(),
            max_rel_err: worst,
            scalars: analytic.len(),
        });
    }
    Ok(GradCheckReport { params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{ops, rng::seeded, Tensor};
    use rand::Rng;

    // relu(W x + b) · c as a composite, seed 11.
    #[test]
    fn linear_relu_composite_passes() {
        let mut rng = seeded(11);
        let mut store = ParamStore::new();
        let w = store.add_glorot("w", 4, 5, &mut rng).unwrap();
        let b = store
            .add(
                "b",
                Tensor::vector((0..4).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap(),
            )
            .unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = gradient_check(&mut store, 1e-5, |s| {
            let mut pre = s.values(b).to_vec();
            ops::matvec_acc(s.values(w), 4, 5, &x, &mut pre);
            let loss = pre.iter().zip(&c).map(|(p, c)| p.max(0.0) * c).sum();
            let dpre: Vec<f64> = pre
                .iter()
                .zip(&c)
                .map(|(p, c)| if *p > 0.0 { *c } else { 0.0 })
                .collect();
            ops::outer_acc(s.grad_mut(w), &dpre, &x);
            ops::add_assign(s.grad_mut(b), &dpre);
            Ok(loss)
        })
        .unwrap();
        assert!(report.max_rel_err() <= 1e-5, "{report:?}");
        assert_eq!(report.params.len(), 2);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![0.7]).unwrap()).unwrap();
        let report = gradient_check(&mut store, 1e-5, |s| {
            let v = s.values(x)[0];
            s.grad_mut(x)[0] += 3.0 * v; // true derivative of v^2 is 2v
            Ok(v * v)
        })
        .unwrap();
        assert!(report.max_rel_err() > 0.3);
    }

    #[test]
    fn nondeterministic_closure_is_rejected() {
        let mut store = ParamStore::new();
        store.add_zeros("x", &[1]).unwrap();
        let mut calls = 0.0;
        let err = gradient_check(&mut store, 1e-5, |_| {
            calls += 1.0;
            Ok(calls)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
