use serde::{Deserialize, Serialize};

use super::criterion::{Criterion, Mode};
use crate::error::{Error, Result};

/// Slack used when flooring products that should land on an integer but may
/// come out a few ulps low after `exp`/`ln` round-trips.
const FLOOR_SLACK: f64 = 1e-9;

pub(crate) fn floor_tol(x: f64) -> usize {
    (x + FLOOR_SLACK).floor().max(0.0) as usize
}

/// Exponential decay of the retained fraction over `total_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSchedule {
    /// Target fraction of filters removed after the last epoch, in (0, 1).
    pub t_prune: f64,
    /// Number of pruning epochs T.
    pub total_epochs: usize,
    /// Share of each epoch's newly weak filters that are hard-removed.
    pub r: f64,
    pub criterion: Criterion,
    pub mode: Mode,
}

impl PruneSchedule {
    pub fn new(t_prune: f64, total_epochs: usize, r: f64, criterion: Criterion, mode: Mode) -> Result<Self> {
        let s = Self {
            t_prune,
            total_epochs,
            r,
            criterion,
            mode,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_prune > 0.0 && self.t_prune < 1.0) {
            return Err(Error::InvalidSchedule(format!("t_prune must be in (0, 1), got {}", self.t_prune)));
        }
        if self.total_epochs == 0 {
            return Err(Error::InvalidSchedule("total_epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::InvalidSchedule(format!("r must be in [0, 1], got {}", self.r)));
        }
        Ok(())
    }

    pub fn ratio(&self, t: usize) -> Result<f64> {
        decay_ratio(t, self.t_prune, self.total_epochs)
    }
}

/// Retained fraction after epoch `t`: `exp(ln(1 - t_prune) * t / T)`.
/// `t = 0` is accepted and gives 1.
pub fn decay_ratio(t: usize, t_prune: f64, total_epochs: usize) -> Result<f64> {
    if total_epochs == 0 || t > total_epochs {
        return Err(Error::EpochOutOfRange { t, total: total_epochs });
    }
    if !(0.0..1.0).contains(&t_prune) {
        return Err(Error::InvalidSchedule(format!("t_prune must be in [0, 1), got {t_prune}")));
    }
    Ok(((1.0 - t_prune).ln() * t as f64 / total_epochs as f64).exp())
}

/// Number of weak filters (cumulative) a layer of `original_n` filters
/// should have once the retained fraction has dropped to `p_t`.
pub fn weak_count(original_n: usize, p_t: f64) -> usize {
    floor_tol(original_n as f64 * (1.0 - p_t)).min(original_n)
}
