use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup: usize,
    pub total: usize,
}

impl CosineSchedule {
    /// Linear warmup from 0 to `base_lr` over `warmup` steps, then cosine
    /// decay reaching `min_lr` at `total`.
    pub fn lr(&self, t: usize) -> Result<f64> {
        cosine_lr(t, self.total, self.warmup, self.base_lr, self.min_lr)
    }
}

pub fn cosine_lr(t: usize, total: usize, warmup: usize, base_lr: f64, min_lr: f64) -> Result<f64> {
    if t > total {
        return Err(Error::config(format!(
            "step {t} is past the schedule end {total}"
        )));
    }
    if t < warmup {
        return Ok(base_lr * t as f64 / warmup as f64);
    }
    if total == warmup {
        return Ok(base_lr);
    }
    let progress = (t - warmup) as f64 / (total - warmup) as f64;
    // Convex weights keep both endpoints exact: w = 1 at progress 0, w = 0 at 1.
    let w = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    Ok(min_lr * (1.0 - w) + base_lr * w)
}
