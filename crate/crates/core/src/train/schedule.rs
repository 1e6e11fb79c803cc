use crate::error::{arg_err, Result};

/// Cosine annealing from `lr0` at `t = 0` to `lr_min` at `t = total`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(arg_err!("cosine schedule needs at least one step"));
    }
    if t > total {
        return Err(arg_err!("step {t} is past the schedule end {total}"));
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    Constant(f64),
    Cosine { lr0: f64, lr_min: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Constant(lr) if lr > 0.0 => Ok(()),
            Schedule::Cosine { lr0, lr_min } if lr0 > lr_min && lr_min > 0.0 => Ok(()),
            ref s => Err(arg_err!("invalid learning-rate schedule {s:?}")),
        }
    }

    /// Learning rate for step `t` of a `total`-step run.
    pub fn lr_at(&self, t: usize, total: usize) -> Result<f64> {
        match *self {
            Schedule::Constant(lr) => Ok(lr),
            Schedule::Cosine { lr0, lr_min } => cosine_lr(t, total, lr0, lr_min),
        }
    }
}
