use super::params::{QuantParams, K_MAX};
use super::{locate, phi_at, tanh_arg, Location};

/// Upstream-scaled partial derivatives of one soft-quantizer evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DsqGradients {
    pub d_x: f64,
    pub d_alpha: f64,
    pub d_l: f64,
    pub d_u: f64,
}

impl DsqGradients {
    fn scaled(self, upstream: f64) -> Self {
        Self {
            d_x: self.d_x * upstream,
            d_alpha: self.d_alpha * upstream,
            d_l: self.d_l * upstream,
            d_u: self.d_u * upstream,
        }
    }
}

fn sech2(z: f64) -> f64 {
    let c = z.cosh();
    1.0 / (c * c)
}

/// Backward pass of [`super::dsq_quantize`].
///
/// The interval index is held fixed. While `k` is below its cap, `k` follows
/// `alpha` and `delta` (so `k delta` depends on alpha only); once capped, `k`
/// is constant and `s = coth(k delta / 2)` follows `delta`. The sign step of
/// the hard forward pass is treated as identity, so `d_x` is also the input
/// gradient used in training.
pub fn dsq_backward(x: f64, p: &QuantParams, upstream: f64) -> DsqGradients {
    let unit = match locate(x, p) {
        Location::Below => DsqGradients {
            d_l: 1.0,
            ..Default::default()
        },
        Location::Above => DsqGradients {
            d_u: 1.0,
            ..Default::default()
        },
        Location::Inside { index, frac } => interior(index, frac, p),
    };
    unit.scaled(upstream)
}

fn interior(index: usize, frac: f64, p: &QuantParams) -> DsqGradients {
    let n = p.intervals() as f64;
    let delta = p.delta();
    let span = p.sharpness_span();
    let s = p.scale();
    let z = tanh_arg(frac, p);
    let th = z.tanh();
    let sh = sech2(z);
    let phi = phi_at(frac, p);
    let q = index as f64 + 0.5 * (phi + 1.0);
    let r = index as f64 + frac;

    let d_x = 0.5 * s * span * sh;

    let (dphi_alpha, dphi_l, dphi_u) = if p.k_clamped() {
        let half = 0.5 * span;
        let sinh = half.sinh();
        let ds = K_MAX / (2.0 * n * sinh * sinh);
        let centre = index as f64 + 0.5;
        let dl = ds * th + s * sh * K_MAX * (centre / n - 1.0);
        let du = -ds * th - s * sh * K_MAX * (centre / n);
        (0.0, dl, du)
    } else {
        let alpha = p.alpha();
        let dlog = -2.0 / (alpha * (2.0 - alpha));
        let k = span / delta;
        let da = s * s * th + s * sh * (frac - 0.5) * dlog;
        let dl = s * sh * k * (r / n - 1.0);
        let du = -s * sh * k * (r / n);
        (da, dl, du)
    };

    DsqGradients {
        d_x,
        d_alpha: 0.5 * delta * dphi_alpha,
        d_l: 1.0 - q / n + 0.5 * delta * dphi_l,
        d_u: q / n + 0.5 * delta * dphi_u,
    }
}
