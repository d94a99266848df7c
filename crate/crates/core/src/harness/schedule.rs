//! Learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{GmaError, Result};

/// Piecewise-constant schedule: `initial` before `warmup_epoch`, `peak`
/// from `warmup_epoch` on, and after `decay_after` the rate is multiplied
/// by `decay_factor` once every `decay_every` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub peak: f64,
    pub warmup_epoch: usize,
    pub decay_after: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 5e-4,
            peak: 2e-3,
            warmup_epoch: 4,
            decay_after: 25,
            decay_every: 2,
            decay_factor: 0.5,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.initial) || !positive(self.peak) {
            return Err(GmaError::Config("learning rates must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(GmaError::Config(format!("decay factor {} not in (0,1]", self.decay_factor)));
        }
        if self.decay_every == 0 {
            return Err(GmaError::Config("decay_every must be positive".into()));
        }
        Ok(())
    }

    /// Human-readable statement of how the schedule is read; written into
    /// the metrics log header.
    pub fn describe(&self) -> String {
        format!(
            "lr {} for epochs 0-{}; step to {} at epoch {} (the warm-up is read as a jump, not a ramp); \
             after epoch {} multiplied by {} every {} epochs",
            self.initial,
            self.warmup_epoch.saturating_sub(1),
            self.peak,
            self.warmup_epoch,
            self.decay_after,
            self.decay_factor,
            self.decay_every
        )
    }
}

pub fn lr_at_epoch(epoch: usize, s: &LrSchedule) -> f64 {
    if epoch < s.warmup_epoch {
        return s.initial;
    }
    if epoch <= s.decay_after {
        return s.peak;
    }
    let halvings = (epoch - s.decay_after) / s.decay_every;
    s.peak * s.decay_factor.powi(halvings as i32)
}
