use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ParamStore;

/// How the learning-rate decay is applied once `decay_after_epochs` have passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecaySchedule {
    /// Multiply by `decay_factor` once per epoch after the threshold.
    #[default]
    PerEpoch,
    /// Multiply by `decay_factor` a single time after the threshold.
    Once,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay_factor: f64,
    pub decay_after_epochs: u32,
    #[serde(default)]
    pub schedule: DecaySchedule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::relationship()
    }
}

impl AdamConfig {
    /// Relationship training: lr 1e-3, decayed by 0.85 after 10 epochs.
    pub fn relationship() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_factor: 0.85,
            decay_after_epochs: 10,
            schedule: DecaySchedule::PerEpoch,
        }
    }

    /// Sentence decoders: constant lr 3e-4.
    pub fn decoder() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            decay_factor: 1.0,
            ..AdamConfig::relationship()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.decay_factor > 0.0
            && self.decay_factor <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings: {self:?}")))
        }
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn effective_lr(&self, epoch: u32) -> f64 {
        let past = epoch.saturating_sub(self.decay_after_epochs);
        let exponent = match self.schedule {
            DecaySchedule::PerEpoch => past,
            DecaySchedule::Once => past.min(1),
        };
        self.learning_rate * self.decay_factor.powi(exponent as i32)
    }
}

/// One bias-corrected Adam update over every parameter of `store`, then
/// clears the gradients. Fails without touching any value if a gradient is
/// not finite.
pub fn adam_step(store: &mut ParamStore, config: &AdamConfig, epoch: u32) -> Result<()> {
    if let Some(name) = store.first_non_finite_grad() {
        return Err(Error::Divergence {
            param: name.to_string(),
        });
    }
    let lr = config.effective_lr(epoch);
    let t = store.step() + 1;
    store.set_step(t);
    let bc1 = 1.0 - config.beta1.powf(t as f64);
    let bc2 = 1.0 - config.beta2.powf(t as f64);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let p = store.param_mut(id);
        let grads = p.grad.values();
        let m = p.m.values_mut();
        for (mi, &g) in m.iter_mut().zip(grads) {
            *mi = config.beta1 * *mi + (1.0 - config.beta1) * g;
        }
        let v = p.v.values_mut();
        for (vi, &g) in v.iter_mut().zip(grads) {
            *vi = config.beta2 * *vi + (1.0 - config.beta2) * g * g;
        }
        let (m, v) = (p.m.values(), p.v.values());
        let theta = p.value.values_mut();
        for ((w, &mi), &vi) in theta.iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
        p.grad.fill(0.0);
    }
    Ok(())
}
