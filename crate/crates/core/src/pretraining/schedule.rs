//! Linear warm-up followed by cosine decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub lr_init: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lr_init: 1e-6,
            lr_peak: 1e-3,
            lr_final: 9e-4,
            warmup_epochs: 1.0,
            total_epochs: 16.0,
            weight_decay: 0.05,
            grad_clip_norm: 1.0,
            batch_size: 8,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_init", self.lr_init),
            ("lr_peak", self.lr_peak),
            ("lr_final", self.lr_final),
            ("total_epochs", self.total_epochs),
            ("grad_clip_norm", self.grad_clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.warmup_epochs >= 0.0) || self.warmup_epochs > self.total_epochs {
            return Err(Error::config("warmup_epochs must lie in [0, total_epochs]"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if self.lr_init >= self.lr_peak {
            return Err(Error::config("lr_init must be below lr_peak"));
        }
        if self.lr_final > self.lr_peak {
            return Err(Error::config("lr_final must not exceed lr_peak"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }

    pub fn warmup_steps(&self, steps_per_epoch: usize) -> f64 {
        self.warmup_epochs * steps_per_epoch as f64
    }

    pub fn total_steps(&self, steps_per_epoch: usize) -> usize {
        (self.total_epochs * steps_per_epoch as f64).round() as usize
    }
}

/// Learning rate at optimiser step `step`; steps past the end clamp to
/// `lr_final`.
pub fn lr_at_step(step: usize, steps_per_epoch: usize, cfg: &ScheduleConfig) -> f64 {
    let warmup = cfg.warmup_steps(steps_per_epoch);
    let total = cfg.total_epochs * steps_per_epoch as f64;
    let s = step as f64;
    if s < warmup {
        return cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * s / warmup;
    }
    let span = total - warmup;
    let progress = if span > 0.0 { ((s - warmup) / span).min(1.0) } else { 1.0 };
    cfg.lr_final + 0.5 * (cfg.lr_peak - cfg.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos())
}
