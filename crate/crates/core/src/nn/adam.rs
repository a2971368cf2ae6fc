use alloc::vec;
use alloc::vec::Vec;

use super::Mlp;
use crate::error::check_dim;
use crate::Result;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, net: &Mlp) -> Self {
        let n = net.params().len();
        Self {
            config,
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        }
    }

    /// Rebuilds a saved state.
    pub fn from_parts(config: AdamConfig, first: Vec<f64>, second: Vec<f64>, steps: u64) -> Result<Self> {
        check_dim("Adam::from_parts", first.len(), second.len())?;
        Ok(Self {
            config,
            first,
            second,
            steps,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    /// One bias-corrected Adam update of `net` with gradient `grad`.
    pub fn step(&mut self, net: &mut Mlp, grad: &[f64]) -> Result<()> {
        check_dim("Adam::step parameters", self.first.len(), net.params().len())?;
        check_dim("Adam::step gradient", self.first.len(), grad.len())?;
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let correction1 = 1.0 - libm::pow(beta1, self.steps as f64);
        let correction2 = 1.0 - libm::pow(beta2, self.steps as f64);
        let params = net.params_mut();
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
        }
        Ok(())
    }
}
