//! Learning-rate schedules: linear warmup into cosine decay (per step) and
//! plateau halving (per epoch).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    WarmupCosine,
    PlateauHalving,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::WarmupCosine,
            warmup_steps: 25_000,
            total_steps: 250_000,
            lr_start: 1e-6,
            lr_peak: 1e-3,
            plateau_patience: 5,
            plateau_factor: 0.5,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return invalid("warmup_steps must be below total_steps");
        }
        if !(self.lr_start > 0.0 && self.lr_peak > 0.0) {
            return invalid("learning rates must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) || self.plateau_patience == 0 {
            return invalid("plateau factor must lie in (0, 1) with nonzero patience");
        }
        Ok(())
    }

    /// Learning rate at an optimizer step for the warmup-cosine schedule.
    pub fn lr_at_step(&self, step: u64) -> f64 {
        if step <= self.warmup_steps {
            let f = if self.warmup_steps == 0 { 1.0 } else { step as f64 / self.warmup_steps as f64 };
            return self.lr_start + (self.lr_peak - self.lr_start) * f;
        }
        if step >= self.total_steps {
            return 0.0;
        }
        let f = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        self.lr_peak * 0.5 * (1.0 + (PI * f).cos())
    }

    /// Learning rate after the given per-epoch validation losses.
    pub fn lr_after_epochs(&self, losses: &[f64]) -> f64 {
        let mut p = Plateau::new(self);
        for &l in losses {
            p.observe(l);
        }
        p.lr
    }
}

/// Halves the rate each time the validation loss has failed to improve on
/// its best value for `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct Plateau {
    pub lr: f64,
    best: f64,
    stale: usize,
    patience: usize,
    factor: f64,
}

impl Plateau {
    pub fn new(cfg: &ScheduleConfig) -> Self {
        Self {
            lr: cfg.lr_peak,
            best: f64::INFINITY,
            stale: 0,
            patience: cfg.plateau_patience,
            factor: cfg.plateau_factor,
        }
    }

    /// Records one epoch; returns true when the rate was just reduced.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.lr *= self.factor;
            self.stale = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_landmarks() {
        let c = ScheduleConfig::default();
        assert_eq!(c.lr_at_step(0), 1e-6);
        assert!((c.lr_at_step(25_000) - 1e-3).abs() < 1e-15);
        assert!((c.lr_at_step(137_500) - 5e-4).abs() < 1e-15);
        assert_eq!(c.lr_at_step(250_000), 0.0);
    }

    #[test]
    fn plateau_needs_five_stale_epochs() {
        let c = ScheduleConfig::default();
        assert_eq!(c.lr_after_epochs(&[1.0; 5]), 1e-3);
        assert_eq!(c.lr_after_epochs(&[1.0; 6]), 5e-4);
        assert_eq!(c.lr_after_epochs(&[1.0, 0.9, 0.8, 0.8, 0.8, 0.8, 0.8]), 1e-3);
    }
}
