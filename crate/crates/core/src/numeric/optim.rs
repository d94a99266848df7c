//! Adamax: Adam with the second moment replaced by an exponentially
//! weighted infinity norm.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{GmaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamaxConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        AdamaxConfig {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamaxState {
    pub config: AdamaxConfig,
    /// First moment per parameter.
    pub m: Vec<Vec<f64>>,
    /// Exponentially weighted infinity norm per parameter.
    pub u: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamaxState {
    pub fn new(config: AdamaxConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        AdamaxState {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            u: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_params(config: AdamaxConfig, params: &[Tensor]) -> Self {
        AdamaxState::new(config, params.iter().map(Tensor::len))
    }

    /// One update with the configured learning rate.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[&[f64]]) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr)
    }

    /// One update with an explicit learning rate (schedules override the
    /// configured one per epoch):
    ///
    /// ```text
    /// m ← β1·m + (1−β1)·g
    /// u ← max(β2·u, |g|)
    /// θ ← θ − lr/(1−β1^t) · m/(u+ε)
    /// ```
    pub fn step_with_lr(&mut self, params: &mut [Tensor], grads: &[&[f64]], lr: f64) -> Result<()> {
        if lr.is_nan() || lr <= 0.0 {
            return Err(GmaError::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(GmaError::shape(
                "adamax_step",
                format!("{} params, {} grads, {} state slots", params.len(), grads.len(), self.m.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(GmaError::shape(
                    "adamax_step",
                    format!("parameter {i}: {} values, {} grads, {} state", p.len(), g.len(), self.m[i].len()),
                ));
            }
        }
        let AdamaxConfig { beta1, beta2, eps, .. } = self.config;
        self.t += 1;
        let step = lr / (1.0 - beta1.powi(self.t as i32));
        for ((p, g), (m, u)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.u.iter_mut())) {
            for (((theta, &g), m), u) in p.data_mut().iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(u.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *u = (beta2 * *u).max(g.abs());
                *theta -= step * *m / (*u + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamaxState::step`].
pub fn adamax_step(params: &mut [Tensor], grads: &[&[f64]], state: &mut AdamaxState) -> Result<()> {
    state.step(params, grads)
}
