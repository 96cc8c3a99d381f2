//! Quantization functions and their analytic gradients.
//!
//! All routines are pure functions of their arguments. Positions inside the
//! clipping range are handled in the scaled coordinate `r = (x - l) / delta`
//! so that the hard quantizer, the uniform quantizer and the integer codes
//! all make the same rounding decision bit for bit.

mod grad;
mod params;

pub use grad::{dsq_backward, DsqGradients};
pub use params::{
    alpha_ceiling, alpha_floor, alpha_to_k, clamp_alpha, k_to_alpha, s_from_alpha, QuantParams,
    ALPHA_INIT, ALPHA_MAX, ALPHA_MIN, K_MAX, MAX_BITS,
};

use crate::error::{ensure_finite, Error, Result};

/// Index of the quantization interval containing a (clipped) value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IntervalIndex(pub usize);

/// Where a value falls relative to the clipping range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Location {
    Below,
    Above,
    /// `frac` is the offset inside interval `index`, in units of delta.
    /// It lies in `[0, 1)` except at the upper clip bound.
    Inside {
        index: usize,
        frac: f64,
    },
}

pub(crate) fn locate(x: f64, p: &QuantParams) -> Location {
    if x < p.lower() {
        Location::Below
    } else if x > p.upper() {
        Location::Above
    } else {
        let (index, frac) = scaled_position(x, p);
        Location::Inside { index, frac }
    }
}

/// Interval index and in-interval offset of `x` after clipping.
/// `r - floor(r)` is exact, which the sign tie-break relies on.
fn scaled_position(x: f64, p: &QuantParams) -> (usize, f64) {
    let r = scaled(x, p);
    let top = p.intervals() - 1;
    let index = (r.floor() as usize).min(top);
    (index, r - index as f64)
}

fn scaled(x: f64, p: &QuantParams) -> f64 {
    let clipped = x.clamp(p.lower(), p.upper());
    (clipped - p.lower()) / p.delta()
}

/// Level index (`0..=2^b-1`) chosen by round-half-up on the clipped value.
pub(crate) fn uniform_level(x: f64, p: &QuantParams) -> usize {
    // r >= 0, so round() breaks ties upward
    (scaled(x, p).round() as usize).min(p.intervals())
}

/// `tanh` argument for an in-interval offset.
fn tanh_arg(frac: f64, p: &QuantParams) -> f64 {
    p.sharpness_span() * (frac - 0.5)
}

fn phi_at(frac: f64, p: &QuantParams) -> f64 {
    (p.scale() * tanh_arg(frac, p).tanh()).clamp(-1.0, 1.0)
}

/// Sign with `sgn(0) = +1`. A negative zero keeps its sign so that offsets
/// just below an interval centre still round down after underflow.
fn sign_of(phi: f64) -> f64 {
    if phi.is_sign_negative() {
        -1.0
    } else {
        1.0
    }
}

/// Binary quantizer: `+1` if `x >= 0`, else `-1`.
pub fn binary_quantize(x: f64) -> Result<f64> {
    ensure_finite("binary_quantize input", x)?;
    Ok(if x >= 0.0 { 1.0 } else { -1.0 })
}

/// Hard uniform quantizer: the nearest of the `2^b` levels `l, l + delta, ..., u`
/// after clipping, ties rounding up.
pub fn uniform_quantize(x: f64, p: &QuantParams) -> f64 {
    p.level(uniform_level(x, p))
}

/// Interval of `x` after clipping, in `0..=2^b-2`.
pub fn interval_of(x: f64, p: &QuantParams) -> IntervalIndex {
    IntervalIndex(scaled_position(x, p).0)
}

/// Asymptotic function `s * tanh(k (x - m_i))` for `x` in interval `i`.
pub fn phi(x: f64, i: IntervalIndex, p: &QuantParams) -> Result<f64> {
    ensure_finite("phi input", x)?;
    let mismatch = Error::IntervalMismatch { x, interval: i.0 };
    if i.0 >= p.intervals() || x < p.lower() || x > p.upper() {
        return Err(mismatch);
    }
    let r = scaled(x, p);
    let frac = r - i.0 as f64;
    // values on a shared boundary belong to both neighbours
    let slack = 4.0 * f64::EPSILON * (r.abs() + 1.0);
    if frac < -slack || frac > 1.0 + slack {
        return Err(mismatch);
    }
    Ok(phi_at(frac.clamp(0.0, 1.0), p))
}

/// Differentiable soft quantizer.
pub fn dsq_quantize(x: f64, p: &QuantParams) -> f64 {
    match locate(x, p) {
        Location::Below => p.lower(),
        Location::Above => p.upper(),
        Location::Inside { index, frac } => {
            let phi = phi_at(frac, p);
            let q = index as f64 + 0.5 * (phi + 1.0);
            (p.lower() + p.delta() * q).clamp(p.lower(), p.upper())
        }
    }
}

/// Soft quantizer composed with the sign step: each interval collapses to
/// its lower or upper level. Identical to [`uniform_quantize`] for every `x`.
pub fn dsq_hard_quantize(x: f64, p: &QuantParams) -> f64 {
    match locate(x, p) {
        Location::Below => p.lower(),
        Location::Above => p.upper(),
        Location::Inside { index, frac } => {
            let step = sign_of(phi_at(frac, p));
            p.level(index + ((step + 1.0) / 2.0) as usize)
        }
    }
}

/// Single-interval soft quantizer; requires `b = 1`.
pub fn binary_dsq(x: f64, p: &QuantParams) -> Result<f64> {
    if p.bits() != 1 {
        return Err(Error::UnsupportedBits(
            p.bits() as u32,
            "1 (binary soft quantizer)",
        ));
    }
    Ok(dsq_quantize(x, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p2() -> QuantParams {
        QuantParams::new(2, 0.0, 3.0, 0.2).unwrap()
    }

    #[test]
    fn binary_quantize_examples() {
        assert_eq!(binary_quantize(0.0).unwrap(), 1.0);
        assert_eq!(binary_quantize(-3.2).unwrap(), -1.0);
        assert_eq!(binary_quantize(1e-300).unwrap(), 1.0);
        assert!(binary_quantize(f64::NAN).is_err());
        assert!(binary_quantize(f64::INFINITY).is_err());
    }

    #[test]
    fn uniform_quantize_examples() {
        let p = p2();
        assert_eq!(uniform_quantize(1.4, &p), 1.0);
        assert_eq!(uniform_quantize(5.0, &p), 3.0);
        for b in 1..=8 {
            let q = QuantParams::new(b, -0.37, 1.91, 0.2).unwrap();
            assert_eq!(uniform_quantize(-0.37, &q), -0.37);
            assert_eq!(uniform_quantize(1.91, &q), 1.91);
        }
    }

    #[test]
    fn interval_of_examples() {
        let p = QuantParams::new(2, -1.0, 1.0, 0.2).unwrap();
        assert_eq!(interval_of(0.0, &p), IntervalIndex(1));
        assert_eq!(interval_of(-1.0, &p), IntervalIndex(0));
        assert_eq!(interval_of(1.0, &p), IntervalIndex(2));
        assert_eq!(interval_of(7.0, &p), IntervalIndex(2));
        assert_eq!(interval_of(-7.0, &p), IntervalIndex(0));
    }

    #[test]
    fn phi_examples() {
        let p = p2();
        assert!(phi(0.5, IntervalIndex(0), &p).unwrap().abs() < 1e-15);
        assert!((phi(1.0, IntervalIndex(0), &p).unwrap() - 1.0).abs() < 1e-15);
        assert!((phi(1.0, IntervalIndex(1), &p).unwrap() + 1.0).abs() < 1e-15);
        // 30-digit reference: 1.25 * tanh(0.3 ln 9)
        let v = phi(0.8, IntervalIndex(0), &p).unwrap();
        assert!((v - 0.722_261_295_750_102_2).abs() < 1e-14, "{v}");
        assert!(phi(0.8, IntervalIndex(2), &p).is_err());
        assert!(phi(-0.1, IntervalIndex(0), &p).is_err());
        assert!(phi(0.5, IntervalIndex(3), &p).is_err());
    }

    #[test]
    fn dsq_quantize_examples() {
        let p = QuantParams::new(2, -1.0, 2.0, 0.2).unwrap();
        assert_eq!(dsq_quantize(-10.0, &p), -1.0);
        assert_eq!(dsq_quantize(10.0, &p), 2.0);
        let m = p.center(1);
        assert!((dsq_quantize(m, &p) - m).abs() < 1e-15);
        let v = dsq_quantize(0.8, &p2());
        assert!((v - 0.861_130_647_875_051_1).abs() < 1e-14, "{v}");
    }

    #[test]
    fn dsq_hard_quantize_examples() {
        let p = p2();
        assert_eq!(dsq_hard_quantize(0.8, &p), 1.0);
        assert_eq!(dsq_hard_quantize(0.5, &p), 1.0);
        assert_eq!(dsq_hard_quantize(1.5, &p), 2.0);
        assert_eq!(dsq_hard_quantize(3.0, &p), 3.0);
        assert_eq!(dsq_hard_quantize(0.49, &p), 0.0);
    }

    #[test]
    fn binary_dsq_examples() {
        let p = QuantParams::new(1, -1.0, 1.0, 0.2).unwrap();
        assert!(binary_dsq(0.0, &p).unwrap().abs() < 1e-15);
        assert_eq!(binary_dsq(3.0, &p).unwrap(), 1.0);
        let v = binary_dsq(0.4, &p).unwrap();
        assert!((v - 0.516_480_284_942_215_6).abs() < 1e-14, "{v}");
        assert_eq!(dsq_hard_quantize(0.4, &p), 1.0);
        assert_eq!(dsq_hard_quantize(-0.4, &p), -1.0);
        assert!(binary_dsq(0.0, &p2()).is_err());
    }

    #[test]
    fn sign_tie_break_on_exact_centres() {
        for b in 1..=4u8 {
            let p = QuantParams::new(b, -0.3, 0.9, 0.1).unwrap();
            for i in 0..p.intervals() {
                let m = p.center(i);
                assert_eq!(dsq_hard_quantize(m, &p), uniform_quantize(m, &p));
            }
        }
    }
}
