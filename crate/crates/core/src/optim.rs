use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            weight_decay: 0.0001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in (0,1), got {b}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every trainable parameter from its
/// accumulated gradient. Weight decay is added to the raw gradient as an L2
/// term before the moment updates.
///
/// The update is computed for all parameters before any is written, so a
/// non-finite result leaves the store untouched.
pub fn adam_step(store: &mut ParamStore, config: &OptimizerConfig) -> Result<()> {
    config.validate()?;
    let OptimizerConfig {
        learning_rate,
        weight_decay,
        beta1,
        beta2,
        epsilon,
    } = *config;

    let mut staged = Vec::with_capacity(store.len());
    for p in store.params() {
        if !p.trainable {
            staged.push(None);
            continue;
        }
        let t = (p.steps + 1) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let n = p.value.len();
        let mut value = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            let w = p.value.data()[i];
            let g = p.grad.data()[i] + weight_decay * w;
            let mi = beta1 * p.m[i] + (1.0 - beta1) * g;
            let vi = beta2 * p.v[i] + (1.0 - beta2) * g * g;
            let update = learning_rate * (mi / c1) / ((vi / c2).sqrt() + epsilon);
            let nw = w - update;
            if !nw.is_finite() || !vi.is_finite() {
                return Err(Error::NonFinite(format!("adam update of {}", p.name)));
            }
            value.push(nw);
            m.push(mi);
            v.push(vi);
        }
        staged.push(Some((value, m, v)));
    }
    for (p, s) in store.params_mut().iter_mut().zip(staged) {
        if let Some((value, m, v)) = s {
            p.value.data_mut().copy_from_slice(&value);
            p.m = m;
            p.v = v;
            p.steps += 1;
        }
    }
    store.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(value)).unwrap();
        s.param_mut(id).grad.data_mut()[0] = grad;
        s
    }

    #[test]
    fn zero_gradient_no_decay_is_fixed_point() {
        let mut s = single(1.0, 0.0);
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut s, &cfg).unwrap();
        assert_eq!(s.params()[0].value.data()[0], 1.0);
    }

    #[test]
    fn first_step_matches_hand_recurrence() {
        let mut s = single(1.0, 1.0);
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut s, &cfg).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction
        let expected = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((s.params()[0].value.data()[0] - expected).abs() < 1e-15);
        assert!((s.params()[0].value.data()[0] - 0.999).abs() < 1e-8);
        assert_eq!(s.params()[0].steps, 1);
    }

    #[test]
    fn weight_decay_shrinks_parameter() {
        let mut s = single(1.0, 0.0);
        adam_step(&mut s, &OptimizerConfig::default()).unwrap();
        assert!(s.params()[0].value.data()[0] < 1.0);
    }

    #[test]
    fn overflow_raises() {
        let mut s = single(f64::MAX, f64::MAX);
        assert!(matches!(
            adam_step(&mut s, &OptimizerConfig::default()),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(s.params()[0].value.data()[0], f64::MAX);
    }

    #[test]
    fn frozen_params_untouched() {
        let mut s = single(1.0, 1.0);
        let id = s.id("p").unwrap();
        s.set_trainable(id, false);
        adam_step(&mut s, &OptimizerConfig::default()).unwrap();
        assert_eq!(s.value(id).data()[0], 1.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            beta2: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
