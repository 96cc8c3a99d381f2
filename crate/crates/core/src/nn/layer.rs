use crate::error::{Error, Result};
use crate::quant::{QuantParams, ALPHA_INIT};
use crate::tensor::Tensor;

use super::fake_quant::{
    backward_with_rule, fake_quant_forward_mode, ForwardMode, GradientRule, SavedContext,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Weights `[outputs, inputs]`; the input is flattened per sample.
    Dense { inputs: usize, outputs: usize },
    /// Weights `[out_channels, in_channels, kh, kw]`; stride 1, zero padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        padding: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

/// A dense or convolution layer whose weights and input activations can be
/// fake-quantized. Weights are the full-precision shadow copy.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub kind: LayerKind,
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub weight_qp: QuantParams,
    pub act_qp: QuantParams,
    pub quantize_weights: bool,
    pub quantize_acts: bool,
    pub activation: Activation,
}

/// How one pass quantizes operands and routes gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantPass {
    pub forward: ForwardMode,
    pub gradient: GradientRule,
    pub alpha_reg: f64,
}

impl QuantPass {
    pub fn hard() -> Self {
        Self {
            forward: ForwardMode::Hard,
            gradient: GradientRule::Dsq,
            alpha_reg: 0.0,
        }
    }

    pub fn soft() -> Self {
        Self {
            forward: ForwardMode::Soft,
            gradient: GradientRule::Dsq,
            alpha_reg: 0.0,
        }
    }

    pub fn uniform() -> Self {
        Self {
            forward: ForwardMode::Uniform,
            gradient: GradientRule::Ste,
            alpha_reg: 0.0,
        }
    }
}

impl QuantizedLayer {
    /// Dense layer with the given weights, zero bias and placeholder
    /// quantizers (range `[-1, 1]`, `b` bits).
    pub fn dense(weights: Tensor, bits: u8) -> Result<Self> {
        let (outputs, inputs) = match weights.shape() {
            &[o, i] => (o, i),
            s => return Err(Error::InvalidShape(s.to_vec())),
        };
        let qp = QuantParams::new(bits, -1.0, 1.0, ALPHA_INIT)?;
        Ok(Self {
            kind: LayerKind::Dense { inputs, outputs },
            weights,
            bias: vec![0.0; outputs],
            weight_qp: qp,
            act_qp: qp,
            quantize_weights: false,
            quantize_acts: false,
            activation: Activation::Identity,
        })
    }

    pub fn conv2d(weights: Tensor, padding: usize, bits: u8) -> Result<Self> {
        let (o, c, kh, kw) = match weights.shape() {
            &[o, c, kh, kw] => (o, c, kh, kw),
            s => return Err(Error::InvalidShape(s.to_vec())),
        };
        let qp = QuantParams::new(bits, -1.0, 1.0, ALPHA_INIT)?;
        Ok(Self {
            kind: LayerKind::Conv2d {
                in_channels: c,
                out_channels: o,
                kernel: (kh, kw),
                padding,
            },
            weights,
            bias: vec![0.0; o],
            weight_qp: qp,
            act_qp: qp,
            quantize_weights: false,
            quantize_acts: false,
            activation: Activation::Identity,
        })
    }

    pub fn with_quantization(mut self, weights: bool, acts: bool) -> Self {
        self.quantize_weights = weights;
        self.quantize_acts = acts;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != self.bias.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.bias.len()],
                actual: vec![bias.len()],
            });
        }
        self.bias = bias;
        Ok(self)
    }

    pub fn is_quantized(&self) -> bool {
        self.quantize_weights || self.quantize_acts
    }

    pub fn output_channels(&self) -> usize {
        match self.kind {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv2d { out_channels, .. } => out_channels,
        }
    }

    /// Forward pass with the hard (deployment-consistent) quantizer.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(input, &QuantPass::hard())?.0)
    }

    pub(crate) fn forward_cached(
        &self,
        input: &Tensor,
        pass: &QuantPass,
    ) -> Result<(Tensor, LayerCache)> {
        let (a_hat, act_ctx) = if self.quantize_acts {
            let (t, ctx) = fake_quant_forward_mode(input, &self.act_qp, pass.forward)?;
            (t, Some(ctx))
        } else {
            (input.clone(), None)
        };
        let (w_hat, weight_ctx) = if self.quantize_weights {
            let (t, ctx) = fake_quant_forward_mode(&self.weights, &self.weight_qp, pass.forward)?;
            (t, Some(ctx))
        } else {
            (self.weights.clone(), None)
        };
        let pre = match self.kind {
            LayerKind::Dense { inputs, outputs } => {
                dense_forward(&a_hat, &w_hat, &self.bias, inputs, outputs)?
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => conv_forward(
                &a_hat,
                &w_hat,
                &self.bias,
                in_channels,
                out_channels,
                kernel,
                padding,
            )?,
        };
        let out = match self.activation {
            Activation::Identity => pre.clone(),
            Activation::Relu => pre.map(|v| v.max(0.0)),
        };
        Ok((
            out,
            LayerCache {
                a_hat,
                w_hat,
                pre,
                act_ctx,
                weight_ctx,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        cache: &LayerCache,
        d_out: &Tensor,
        pass: &QuantPass,
    ) -> Result<LayerGrads> {
        let mut d_pre = d_out.clone();
        if self.activation == Activation::Relu {
            for (g, &p) in d_pre.data_mut().iter_mut().zip(cache.pre.data()) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let (d_a_hat, d_w_hat, d_bias) = match self.kind {
            LayerKind::Dense { inputs, outputs } => {
                dense_backward(&cache.a_hat, &cache.w_hat, &d_pre, inputs, outputs)
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => conv_backward(
                &cache.a_hat,
                &cache.w_hat,
                &d_pre,
                in_channels,
                out_channels,
                kernel,
                padding,
            ),
        };
        let (d_input, act) = match &cache.act_ctx {
            Some(ctx) => {
                let g = backward_with_rule(pass.gradient, ctx, &d_a_hat, pass.alpha_reg)?;
                (
                    g.d_input,
                    QuantScalarGrads {
                        alpha: g.d_alpha,
                        lower: g.d_l,
                        upper: g.d_u,
                    },
                )
            }
            None => (d_a_hat, QuantScalarGrads::default()),
        };
        let (d_weights, weight) = match &cache.weight_ctx {
            Some(ctx) => {
                let g = backward_with_rule(pass.gradient, ctx, &d_w_hat, pass.alpha_reg)?;
                (
                    g.d_input,
                    QuantScalarGrads {
                        alpha: g.d_alpha,
                        lower: g.d_l,
                        upper: g.d_u,
                    },
                )
            }
            None => (d_w_hat, QuantScalarGrads::default()),
        };
        Ok(LayerGrads {
            d_input,
            d_weights,
            d_bias,
            weight,
            act,
        })
    }
}

/// Intermediate values of one layer's forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub a_hat: Tensor,
    pub w_hat: Tensor,
    pub pre: Tensor,
    pub act_ctx: Option<SavedContext>,
    pub weight_ctx: Option<SavedContext>,
}

/// Gradients of the three scalars of one quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuantScalarGrads {
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_input: Tensor,
    pub d_weights: Tensor,
    pub d_bias: Vec<f64>,
    pub weight: QuantScalarGrads,
    pub act: QuantScalarGrads,
}

fn dense_forward(
    a: &Tensor,
    w: &Tensor,
    bias: &[f64],
    inputs: usize,
    outputs: usize,
) -> Result<Tensor> {
    if a.row_len() != inputs {
        return Err(Error::ShapeMismatch {
            expected: vec![a.rows(), inputs],
            actual: a.shape().to_vec(),
        });
    }
    let n = a.rows();
    let (ad, wd) = (a.data(), w.data());
    let mut out = vec![0.0; n * outputs];
    for s in 0..n {
        let row = &ad[s * inputs..(s + 1) * inputs];
        for o in 0..outputs {
            let wrow = &wd[o * inputs..(o + 1) * inputs];
            let dot: f64 = row.iter().zip(wrow).map(|(x, y)| x * y).sum();
            out[s * outputs + o] = dot + bias[o];
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![n, outputs], out))
}

fn dense_backward(
    a: &Tensor,
    w: &Tensor,
    d_out: &Tensor,
    inputs: usize,
    outputs: usize,
) -> (Tensor, Tensor, Vec<f64>) {
    let n = a.rows();
    let (ad, wd, gd) = (a.data(), w.data(), d_out.data());
    let mut d_a = vec![0.0; n * inputs];
    let mut d_w = vec![0.0; outputs * inputs];
    let mut d_b = vec![0.0; outputs];
    for s in 0..n {
        for o in 0..outputs {
            let g = gd[s * outputs + o];
            if g == 0.0 {
                continue;
            }
            d_b[o] += g;
            for i in 0..inputs {
                d_w[o * inputs + i] += g * ad[s * inputs + i];
                d_a[s * inputs + i] += g * wd[o * inputs + i];
            }
        }
    }
    (
        Tensor::from_parts_unchecked(a.shape().to_vec(), d_a),
        Tensor::from_parts_unchecked(w.shape().to_vec(), d_w),
        d_b,
    )
}

fn conv_dims(
    input: &Tensor,
    in_channels: usize,
    kernel: (usize, usize),
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = match input.shape() {
        &[n, c, h, w] => (n, c, h, w),
        s => {
            return Err(Error::ShapeMismatch {
                expected: vec![0, in_channels, 0, 0],
                actual: s.to_vec(),
            })
        }
    };
    if c != in_channels {
        return Err(Error::ShapeMismatch {
            expected: vec![n, in_channels, h, w],
            actual: input.shape().to_vec(),
        });
    }
    let (kh, kw) = kernel;
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::ShapeMismatch {
            expected: vec![n, c, kh, kw],
            actual: input.shape().to_vec(),
        });
    }
    Ok((n, h, w, h + 2 * padding + 1 - kh, w + 2 * padding + 1 - kw))
}

fn conv_forward(
    a: &Tensor,
    w: &Tensor,
    bias: &[f64],
    in_channels: usize,
    out_channels: usize,
    kernel: (usize, usize),
    padding: usize,
) -> Result<Tensor> {
    let (n, h, wd, oh, ow) = conv_dims(a, in_channels, kernel, padding)?;
    let (kh, kw) = kernel;
    let (ad, wt) = (a.data(), w.data());
    let mut out = vec![0.0; n * out_channels * oh * ow];
    for s in 0..n {
        for o in 0..out_channels {
            let base = (s * out_channels + o) * oh * ow;
            out[base..base + oh * ow]
                .iter_mut()
                .for_each(|v| *v = bias[o]);
            for c in 0..in_channels {
                let plane = &ad[(s * in_channels + c) * h * wd..][..h * wd];
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wv = wt[((o * in_channels + c) * kh + ki) * kw + kj];
                        for y in 0..oh {
                            let iy = y + ki;
                            if iy < padding || iy - padding >= h {
                                continue;
                            }
                            let row = &plane[(iy - padding) * wd..][..wd];
                            for x in 0..ow {
                                let ix = x + kj;
                                if ix < padding || ix - padding >= wd {
                                    continue;
                                }
                                out[base + y * ow + x] += wv * row[ix - padding];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(
        vec![n, out_channels, oh, ow],
        out,
    ))
}

fn conv_backward(
    a: &Tensor,
    w: &Tensor,
    d_out: &Tensor,
    in_channels: usize,
    out_channels: usize,
    kernel: (usize, usize),
    padding: usize,
) -> (Tensor, Tensor, Vec<f64>) {
    let (n, h, wd, oh, ow) =
        conv_dims(a, in_channels, kernel, padding).expect("shape checked in forward");
    let (kh, kw) = kernel;
    let (ad, wt, gd) = (a.data(), w.data(), d_out.data());
    let mut d_a = vec![0.0; ad.len()];
    let mut d_w = vec![0.0; wt.len()];
    let mut d_b = vec![0.0; out_channels];
    for s in 0..n {
        for o in 0..out_channels {
            let gbase = (s * out_channels + o) * oh * ow;
            d_b[o] += gd[gbase..gbase + oh * ow].iter().sum::<f64>();
            for c in 0..in_channels {
                let pbase = (s * in_channels + c) * h * wd;
                for ki in 0..kh {
                    for kj in 0..kw {
                        let widx = ((o * in_channels + c) * kh + ki) * kw + kj;
                        let wv = wt[widx];
                        let mut acc = 0.0;
                        for y in 0..oh {
                            let iy = y + ki;
                            if iy < padding || iy - padding >= h {
                                continue;
                            }
                            for x in 0..ow {
                                let ix = x + kj;
                                if ix < padding || ix - padding >= wd {
                                    continue;
                                }
                                let g = gd[gbase + y * ow + x];
                                let pi = pbase + (iy - padding) * wd + (ix - padding);
                                acc += g * ad[pi];
                                d_a[pi] += g * wv;
                            }
                        }
                        d_w[widx] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts_unchecked(a.shape().to_vec(), d_a),
        Tensor::from_parts_unchecked(w.shape().to_vec(), d_w),
        d_b,
    )
}

/// Forward pass of a single layer using the hard quantizer.
pub fn layer_forward(layer: &QuantizedLayer, input: &Tensor) -> Result<Tensor> {
    layer.forward(input)
}
