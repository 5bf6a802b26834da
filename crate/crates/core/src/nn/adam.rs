use super::{NnError, ParamSet, PolicyParams};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 2.5e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-5 }
    }
}

impl<T: Scalar> PolicyParams<T> {
    /// One bias-corrected Adam update. Parameters and moments are left
    /// untouched if any gradient is NaN or infinite.
    pub fn adam_step(&mut self, grads: &ParamSet<T>, cfg: &AdamConfig) -> Result<(), NnError> {
        let names = self.param_names();
        for (name, g) in names.iter().zip(&grads.tensors) {
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient((*name).to_string()));
            }
        }
        if grads.tensors.len() != self.params.tensors.len() {
            return Err(NnError::ShapeMismatch {
                what: "gradient set".into(),
                expected: vec![self.params.tensors.len()],
                actual: vec![grads.tensors.len()],
            });
        }
        self.adam.step += 1;
        let t = self.adam.step as f64;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let one = T::one();
        // Bias corrections folded into the step size.
        let step_size = T::from_f64_lossy(cfg.learning_rate * (1.0 - cfg.beta2.powf(t)).sqrt() / (1.0 - cfg.beta1.powf(t)));
        let eps_hat = T::from_f64_lossy(cfg.epsilon * (1.0 - cfg.beta2.powf(t)).sqrt());
        for (((p, g), m), v) in self
            .params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.adam.m.tensors.iter_mut())
            .zip(self.adam.v.tensors.iter_mut())
        {
            for (((p, &g), m), v) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps_hat);
            }
        }
        Ok(())
    }
}
