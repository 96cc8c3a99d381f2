//! Element-wise fake quantization of tensors and its backward pass.

use crate::error::{Error, Result};
use crate::quant::{
    dsq_backward, dsq_hard_quantize, dsq_quantize, locate, uniform_level, uniform_quantize,
    Location, QuantParams,
};
use crate::tensor::Tensor;

/// How quantized operands are produced in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForwardMode {
    /// Soft quantizer output, no sign step.
    Soft,
    /// Clip, soft quantizer, sign, dequantize.
    Hard,
    /// Plain round-to-nearest uniform quantizer.
    Uniform,
}

/// Which backward rule turns output gradients into input and parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradientRule {
    Dsq,
    /// Straight-through: identity inside `[l, u]`, zero outside.
    Ste,
}

/// State kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct SavedContext {
    input: Tensor,
    params: QuantParams,
}

impl SavedContext {
    pub fn params(&self) -> &QuantParams {
        &self.params
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }
}

/// Input gradient plus the summed gradients of the three quantizer scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct FakeQuantGrads {
    pub d_input: Tensor,
    pub d_alpha: f64,
    pub d_l: f64,
    pub d_u: f64,
}

/// Forward pass with the sign step, i.e. the training-time quantizer.
pub fn fake_quant_forward(t: &Tensor, qp: &QuantParams) -> Result<(Tensor, SavedContext)> {
    fake_quant_forward_mode(t, qp, ForwardMode::Hard)
}

pub fn fake_quant_forward_mode(
    t: &Tensor,
    qp: &QuantParams,
    mode: ForwardMode,
) -> Result<(Tensor, SavedContext)> {
    if let Some(&value) = t.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "fake quantization input",
            value,
        });
    }
    let out = quantize_tensor(t, qp, mode);
    Ok((
        out,
        SavedContext {
            input: t.clone(),
            params: *qp,
        },
    ))
}

pub(crate) fn quantize_tensor(t: &Tensor, qp: &QuantParams, mode: ForwardMode) -> Tensor {
    match mode {
        ForwardMode::Soft => t.map(|x| dsq_quantize(x, qp)),
        ForwardMode::Hard => t.map(|x| dsq_hard_quantize(x, qp)),
        ForwardMode::Uniform => t.map(|x| uniform_quantize(x, qp)),
    }
}

fn check_upstream(ctx: &SavedContext, upstream: &Tensor) -> Result<()> {
    if ctx.input.shape() != upstream.shape() {
        return Err(Error::ShapeMismatch {
            expected: ctx.input.shape().to_vec(),
            actual: upstream.shape().to_vec(),
        });
    }
    Ok(())
}

/// Backward pass of the soft quantizer. `alpha_reg` adds the gradient
/// `2 * alpha_reg * alpha` of the quadratic penalty on alpha.
pub fn fake_quant_backward(
    ctx: &SavedContext,
    upstream: &Tensor,
    alpha_reg: f64,
) -> Result<FakeQuantGrads> {
    check_upstream(ctx, upstream)?;
    let qp = &ctx.params;
    let mut d_input = Vec::with_capacity(upstream.len());
    let (mut d_alpha, mut d_l, mut d_u) = (0.0, 0.0, 0.0);
    for (&x, &g) in ctx.input.data().iter().zip(upstream.data()) {
        let grads = dsq_backward(x, qp, g);
        d_input.push(grads.d_x);
        d_alpha += grads.d_alpha;
        d_l += grads.d_l;
        d_u += grads.d_u;
    }
    d_alpha += 2.0 * alpha_reg * qp.alpha();
    Ok(FakeQuantGrads {
        d_input: Tensor::from_parts_unchecked(upstream.shape().to_vec(), d_input),
        d_alpha,
        d_l,
        d_u,
    })
}

/// Uniform quantization forward pass used by the straight-through baseline.
pub fn ste_baseline_forward(t: &Tensor, qp: &QuantParams) -> Result<(Tensor, SavedContext)> {
    fake_quant_forward_mode(t, qp, ForwardMode::Uniform)
}

/// Straight-through backward pass. Clipped elements pass their gradient to
/// `l` or `u`; interior elements pass it to the input and to `l`, `u` through
/// the position of their (fixed) level. Alpha receives nothing.
pub fn ste_baseline_backward(ctx: &SavedContext, upstream: &Tensor) -> Result<FakeQuantGrads> {
    check_upstream(ctx, upstream)?;
    let qp = &ctx.params;
    let n = qp.intervals() as f64;
    let mut d_input = Vec::with_capacity(upstream.len());
    let (mut d_l, mut d_u) = (0.0, 0.0);
    for (&x, &g) in ctx.input.data().iter().zip(upstream.data()) {
        match locate(x, qp) {
            Location::Below => {
                d_input.push(0.0);
                d_l += g;
            }
            Location::Above => {
                d_input.push(0.0);
                d_u += g;
            }
            Location::Inside { .. } => {
                d_input.push(g);
                let j = uniform_level(x, qp) as f64;
                d_l += g * (1.0 - j / n);
                d_u += g * (j / n);
            }
        }
    }
    Ok(FakeQuantGrads {
        d_input: Tensor::from_parts_unchecked(upstream.shape().to_vec(), d_input),
        d_alpha: 0.0,
        d_l,
        d_u,
    })
}

/// Dispatches to the backward rule in use.
pub fn backward_with_rule(
    rule: GradientRule,
    ctx: &SavedContext,
    upstream: &Tensor,
    alpha_reg: f64,
) -> Result<FakeQuantGrads> {
    match rule {
        GradientRule::Dsq => fake_quant_backward(ctx, upstream, alpha_reg),
        GradientRule::Ste => ste_baseline_backward(ctx, upstream),
    }
}
