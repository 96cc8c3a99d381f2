use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How clipping bounds are chosen during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClipPolicy {
    /// Exponential moving average of per-batch min/max; never learned.
    MovingAverage,
    /// First-batch min/max, then optimized by gradient descent.
    Learned,
}

impl fmt::Display for ClipPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MovingAverage => "moving-average",
            Self::Learned => "learned",
        })
    }
}

impl FromStr for ClipPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving-average" | "ma" => Ok(Self::MovingAverage),
            "learned" => Ok(Self::Learned),
            other => Err(Error::InvalidArgument(format!(
                "unknown clip policy `{other}` (expected moving-average or learned)"
            ))),
        }
    }
}

/// Running clip-bound estimate for one quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTracker {
    policy: ClipPolicy,
    decay: f64,
    bounds: Option<(f64, f64)>,
}

impl ClipTracker {
    pub fn new(policy: ClipPolicy, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "moving-average decay {decay} outside (0, 1)"
            )));
        }
        Ok(Self {
            policy,
            decay,
            bounds: None,
        })
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn is_initialized(&self) -> bool {
        self.bounds.is_some()
    }

    /// Feeds one batch. The first batch sets the bounds; later batches move
    /// them by the moving average, or leave them to the optimizer under
    /// [`ClipPolicy::Learned`].
    pub fn observe(&mut self, t: &Tensor) -> Result<(f64, f64)> {
        let (lo, hi) = batch_range(t)?;
        let next = match (self.bounds, self.policy) {
            (None, _) => (lo, hi),
            (Some(prev), ClipPolicy::Learned) => prev,
            (Some((l, u)), ClipPolicy::MovingAverage) => {
                let d = self.decay;
                widen((d * l + (1.0 - d) * lo, d * u + (1.0 - d) * hi))
            }
        };
        self.bounds = Some(next);
        Ok(next)
    }
}

fn batch_range(t: &Tensor) -> Result<(f64, f64)> {
    if t.is_empty() {
        return Err(Error::Empty("clipping statistics"));
    }
    let (lo, hi) = t.min_max();
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NonFinite {
            context: "clipping statistics",
            value: if lo.is_finite() { hi } else { lo },
        });
    }
    Ok(widen((lo, hi)))
}

/// Pulls degenerate ranges apart by a few ulps of the magnitude.
fn widen((lo, hi): (f64, f64)) -> (f64, f64) {
    if lo < hi {
        return (lo, hi);
    }
    let margin = 1024.0 * f64::EPSILON * lo.abs().max(1.0);
    log::warn!("constant tensor (min == max == {lo}); widening clip range by {margin:e}");
    (lo - margin, hi + margin)
}

/// Clip bounds for a single tensor under the given policy.
pub fn init_clipping(t: &Tensor, policy: ClipPolicy, ma_decay: f64) -> Result<(f64, f64)> {
    ClipTracker::new(policy, ma_decay)?.observe(t)
}
