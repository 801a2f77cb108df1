use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

/// Linear warmup followed by a half-cycle cosine decay to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub lr_scaling_reference_batch: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            base_lr: 1e-3,
            total_steps: 1,
            warmup_fraction: 0.1,
            batch_size: 64,
            lr_scaling_reference_batch: 64,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "warmup_fraction must lie in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.lr_scaling_reference_batch == 0 {
            return Err(TrainError::InvalidConfig(
                "total_steps, batch_size and lr_scaling_reference_batch must be >= 1".into(),
            ));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(TrainError::InvalidConfig(format!("base_lr {}", self.base_lr)));
        }
        Ok(())
    }

    /// base_lr · batch_size / reference batch.
    pub fn peak_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / self.lr_scaling_reference_batch as f64
    }

    /// W = round(warmup_fraction · total_steps).
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }
}

/// Learning rate at `step` (0 ≤ step ≤ total_steps).
pub fn lr_at(step: usize, cfg: &ScheduleConfig) -> Result<f64> {
    let total = cfg.total_steps;
    if step > total {
        return Err(TrainError::StepOutOfRange { step, total });
    }
    let peak = cfg.peak_lr();
    let w = cfg.warmup_steps();
    if step < w {
        return Ok(peak * step as f64 / w as f64);
    }
    if total == w {
        return Ok(if step == total { 0.0 } else { peak });
    }
    let t = (step - w) as f64 / (total - w) as f64;
    Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}
