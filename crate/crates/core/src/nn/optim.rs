use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParameterStore};
use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Gradients<T>,
    second: Gradients<T>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParameterStore<T>) -> Self {
        Adam {
            config,
            first: Gradients::zeros_like(params),
            second: Gradients::zeros_like(params),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParameterStore<T>, grads: &Gradients<T>) -> Result<()> {
        if let Some(name) = grads.first_non_finite(params) {
            return Err(Error::NonFiniteGradient(name));
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let bc1 = T::c(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::c(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::c(c.learning_rate);
        let eps = T::c(c.epsilon);
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.get(id).as_slice();
            let m = self.first.get_mut(id).as_mut_slice();
            let v = self.second.get_mut(id).as_mut_slice();
            let p = params.get_mut(id).as_mut_slice();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
