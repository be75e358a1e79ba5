//! Learning-rate schedules, indexed by (possibly fractional) epoch.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `base` until `start`, then multiplied by `factor` once per epoch,
    /// the first decay landing on epoch `start` itself.
    ExponentialAfterEpoch { base: f64, factor: f64, start: u32 },
    /// Cosine annealing with warm restarts. Period `i` lasts `t0 * t_mul^i`.
    CosineRestarts { l_max: f64, l_min: f64, t0: f64, t_mul: f64 },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { lr } => lr > 0.0 && lr.is_finite(),
            LrSchedule::ExponentialAfterEpoch { base, factor, .. } => {
                base > 0.0 && base.is_finite() && factor > 0.0 && factor <= 1.0
            }
            LrSchedule::CosineRestarts { l_max, l_min, t0, t_mul } => {
                l_min > 0.0 && l_min <= l_max && l_max.is_finite() && t0 > 0.0 && t_mul >= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid learning-rate schedule {self:?}")))
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::ExponentialAfterEpoch { base, .. } => base,
            LrSchedule::CosineRestarts { l_max, .. } => l_max,
        }
    }

    pub fn lr(&self, epoch: f64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::ExponentialAfterEpoch { base, factor, start } => {
                let e = epoch.max(0.0).floor() as i64;
                if e < start as i64 {
                    base
                } else {
                    base * factor.powi((e - start as i64 + 1) as i32)
                }
            }
            LrSchedule::CosineRestarts { l_max, l_min, t0, t_mul } => {
                let t = epoch.max(0.0);
                let (start, len) = period_of(t, t0, t_mul);
                l_min + 0.5 * (l_max - l_min) * (1.0 + (PI * (t - start) / len).cos())
            }
        }
    }
}

/// Start and length of the restart period containing `t`. A period's end
/// point belongs to that period.
fn period_of(t: f64, t0: f64, t_mul: f64) -> (f64, f64) {
    let (mut start, mut len) = (0.0, t0);
    while t > start + len {
        start += len;
        len *= t_mul;
    }
    (start, len)
}
