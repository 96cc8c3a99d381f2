use crate::error::{ensure_finite, Error, Result};

/// Lower bound for the similarity factor. Below it `ln(2/alpha - 1)` grows
/// past the point where `tanh` saturates in double precision.
pub const ALPHA_MIN: f64 = 1e-3;
/// Open upper bound for the similarity factor.
pub const ALPHA_MAX: f64 = 0.5;
/// Cap on the tanh sharpness `k`.
pub const K_MAX: f64 = 1000.0;
/// Widest supported bit width.
pub const MAX_BITS: u8 = 8;

/// Default similarity factor at the start of training.
pub const ALPHA_INIT: f64 = 0.2;

/// Per-tensor quantizer state: bit width, clipping range and similarity factor.
///
/// Everything else (`delta`, `k`, `s`) is derived on demand. `k` is capped at
/// [`K_MAX`]; once the cap binds, `s` follows the capped `k` so that the
/// per-interval curves still meet at exactly `-1` and `+1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    bits: u8,
    lower: f64,
    upper: f64,
    alpha: f64,
}

impl QuantParams {
    pub fn new(bits: u8, lower: f64, upper: f64, alpha: f64) -> Result<Self> {
        validate_bits(bits)?;
        validate_range(lower, upper)?;
        validate_alpha(alpha)?;
        Ok(Self {
            bits,
            lower,
            upper,
            alpha,
        })
    }

    /// Like [`QuantParams::new`] but forces `alpha` into the admissible
    /// interval instead of rejecting it.
    pub fn with_clamped_alpha(bits: u8, lower: f64, upper: f64, alpha: f64) -> Result<Self> {
        ensure_finite("alpha", alpha)?;
        Self::new(bits, lower, upper, clamp_alpha(alpha))
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of representable levels, `2^b`.
    pub fn levels(&self) -> usize {
        1usize << self.bits
    }

    /// Number of quantization intervals, `2^b - 1`.
    pub fn intervals(&self) -> usize {
        self.levels() - 1
    }

    /// Interval length `(u - l) / (2^b - 1)`.
    pub fn delta(&self) -> f64 {
        (self.upper - self.lower) / self.intervals() as f64
    }

    /// `ln(2/alpha - 1) / delta` before the cap is applied.
    pub fn raw_sharpness(&self) -> f64 {
        alpha_log_term(self.alpha) / self.delta()
    }

    pub fn k_clamped(&self) -> bool {
        self.raw_sharpness() > K_MAX
    }

    /// Tanh sharpness `k`, capped at [`K_MAX`].
    pub fn sharpness(&self) -> f64 {
        self.raw_sharpness().min(K_MAX)
    }

    /// Product `k * delta`; controls the shape of every interval's curve.
    pub fn sharpness_span(&self) -> f64 {
        if self.k_clamped() {
            K_MAX * self.delta()
        } else {
            alpha_log_term(self.alpha)
        }
    }

    /// The similarity factor actually realised by the (possibly capped) `k`.
    pub fn effective_alpha(&self) -> f64 {
        if self.k_clamped() {
            1.0 - (0.5 * self.sharpness_span()).tanh()
        } else {
            self.alpha
        }
    }

    /// Scaling factor `s = 1 / tanh(k delta / 2)`, equal to `1 / (1 - alpha)`
    /// while `k` is below its cap.
    pub fn scale(&self) -> f64 {
        if self.k_clamped() {
            1.0 / (0.5 * self.sharpness_span()).tanh()
        } else {
            1.0 / (1.0 - self.alpha)
        }
    }

    /// Dequantized value of level `j` in `0..=2^b-1`. The top level is pinned
    /// to `upper` so that clipping to `u` is exact.
    pub fn level(&self, j: usize) -> f64 {
        if j >= self.intervals() {
            self.upper
        } else {
            self.lower + self.delta() * j as f64
        }
    }

    /// Centre of interval `i`, `l + (i + 0.5) delta`.
    pub fn center(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.delta()
    }

    pub fn set_alpha_clamped(&mut self, alpha: f64) {
        if alpha.is_finite() {
            self.alpha = clamp_alpha(alpha);
        }
    }

    pub fn set_range(&mut self, lower: f64, upper: f64) -> Result<()> {
        validate_range(lower, upper)?;
        self.lower = lower;
        self.upper = upper;
        Ok(())
    }

    pub fn with_bits(mut self, bits: u8) -> Result<Self> {
        validate_bits(bits)?;
        self.bits = bits;
        Ok(self)
    }
}

/// Smallest admissible alpha strictly above [`ALPHA_MIN`].
pub fn alpha_floor() -> f64 {
    f64::from_bits(ALPHA_MIN.to_bits() + 1)
}

/// Largest admissible alpha strictly below [`ALPHA_MAX`].
pub fn alpha_ceiling() -> f64 {
    f64::from_bits(ALPHA_MAX.to_bits() - 1)
}

pub fn clamp_alpha(alpha: f64) -> f64 {
    alpha.clamp(alpha_floor(), alpha_ceiling())
}

pub(crate) fn alpha_log_term(alpha: f64) -> f64 {
    (2.0 / alpha - 1.0).ln()
}

fn validate_bits(bits: u8) -> Result<()> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::UnsupportedBits(bits as u32, "1..=8"))
    }
}

fn validate_range(lower: f64, upper: f64) -> Result<()> {
    ensure_finite("lower clip bound", lower)?;
    ensure_finite("upper clip bound", upper)?;
    if lower < upper {
        Ok(())
    } else {
        Err(Error::InvalidRange { lower, upper })
    }
}

fn validate_alpha(alpha: f64) -> Result<()> {
    ensure_finite("alpha", alpha)?;
    if alpha > ALPHA_MIN && alpha < ALPHA_MAX {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange {
            alpha,
            min: ALPHA_MIN,
            max: ALPHA_MAX,
        })
    }
}

/// `k = ln(2/alpha - 1) / delta`, capped at [`K_MAX`].
pub fn alpha_to_k(alpha: f64, delta: f64) -> Result<f64> {
    ensure_finite("alpha", alpha)?;
    ensure_finite("delta", delta)?;
    if !(alpha > 0.0 && alpha < ALPHA_MAX) {
        return Err(Error::AlphaOutOfRange {
            alpha,
            min: 0.0,
            max: ALPHA_MAX,
        });
    }
    if delta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    Ok((alpha_log_term(alpha) / delta).min(K_MAX))
}

/// Inverse of [`alpha_to_k`] on the uncapped branch: `1 - tanh(k delta / 2)`.
pub fn k_to_alpha(k: f64, delta: f64) -> f64 {
    1.0 - (0.5 * k * delta).tanh()
}

/// `s = 1 / (1 - alpha)`.
pub fn s_from_alpha(alpha: f64) -> Result<f64> {
    ensure_finite("alpha", alpha)?;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange {
            alpha,
            min: 0.0,
            max: 1.0,
        });
    }
    Ok(1.0 / (1.0 - alpha))
}
