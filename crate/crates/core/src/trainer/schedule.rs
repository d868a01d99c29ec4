//! Cosine annealing with warm restarts.

use std::f64::consts::PI;

use super::TrainConfig;

/// Closed-form warm-restart cosine in units of optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    /// Length of the first period in steps.
    pub first_period: u64,
    pub mult: u64,
}

impl LrSchedule {
    pub fn from_config(cfg: &TrainConfig, steps_per_epoch: usize) -> Self {
        Self {
            lr_max: cfg.lr_max,
            lr_min: cfg.lr_min,
            first_period: (cfg.restart_period * steps_per_epoch).max(1) as u64,
            mult: cfg.restart_mult.max(1) as u64,
        }
    }

    /// Position `(t, T_i)` of `step` inside its restart period.
    pub fn position(&self, step: u64) -> (u64, u64) {
        let (mut t, mut period) = (step, self.first_period);
        while t >= period {
            t -= period;
            period = period.saturating_mul(self.mult);
        }
        (t, period)
    }

    pub fn at(&self, step: u64) -> f64 {
        let (t, period) = self.position(step);
        let frac = t as f64 / period as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * frac).cos())
    }
}

/// Learning rate used for optimizer step `step` (0-based).
pub fn lr_at(step: u64, cfg: &TrainConfig, steps_per_epoch: usize) -> f64 {
    LrSchedule::from_config(cfg, steps_per_epoch).at(step)
}
