//! Adam with bias correction and a simple step-size schedule.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Multiplier on the base step size as a function of progress.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear from 1 at the first step to `final_fraction` at the last.
    Linear { final_fraction: f64 },
}

impl Schedule {
    pub fn factor(&self, step: usize, total_steps: usize) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::Linear { final_fraction } => {
                if total_steps <= 1 {
                    return 1.0;
                }
                let t = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
                1.0 + (final_fraction - 1.0) * t
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<T>,
    second: Vec<T>,
    steps: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Adam { config, first: vec![T::zero(); len], second: vec![T::zero(); len], steps: 0 }
    }

    pub fn steps(&self) -> usize {
        self.steps as usize
    }

    /// One update with step size `learning_rate · lr_factor`.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr_factor: f64) {
        assert_eq!(params.len(), self.first.len(), "parameter count");
        assert_eq!(grad.len(), self.first.len(), "gradient count");
        self.steps += 1;
        let b1 = T::of(self.config.beta1);
        let b2 = T::of(self.config.beta2);
        let one = T::one();
        let correction1 = one - b1.powi(self.steps);
        let correction2 = one - b2.powi(self.steps);
        let lr = T::of(self.config.learning_rate * lr_factor);
        let eps = T::of(self.config.epsilon);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
