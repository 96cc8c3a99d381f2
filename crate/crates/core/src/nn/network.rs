use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::quant::QuantParams;
use crate::tensor::Tensor;

use super::layer::{Activation, LayerCache, LayerGrads, QuantPass, QuantizedLayer};

/// Which operand of a layer a quantizer acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantSite {
    Weights,
    Activations,
}

/// Feed-forward stack of layers ending in class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<QuantizedLayer>,
}

/// Loss, accuracy and every parameter gradient for one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: Vec<LayerGrads>,
}

impl Network {
    /// The first and last layers must run in full precision.
    pub fn new(layers: Vec<QuantizedLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("no layers".into()));
        }
        for end in [0, layers.len() - 1] {
            if layers[end].is_quantized() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {end} is the first or last layer and must not be quantized"
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Multi-layer perceptron `inputs -> hidden... -> classes` with ReLU
    /// between layers. Every hidden-to-hidden layer (all but the first and
    /// last) quantizes weights and input activations at `bits` bits.
    pub fn mlp(
        inputs: usize,
        hidden: &[usize],
        classes: usize,
        bits: u8,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut widths = vec![inputs];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let count = widths.len() - 1;
        let mut layers = Vec::with_capacity(count);
        for (idx, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weights = he_init(vec![fan_out, fan_in], fan_in, rng)?;
            let last = idx + 1 == count;
            let quantized = idx != 0 && !last;
            let mut layer =
                QuantizedLayer::dense(weights, bits)?.with_quantization(quantized, quantized);
            if !last {
                layer = layer.with_activation(Activation::Relu);
            }
            layers.push(layer);
        }
        Self::new(layers)
    }

    /// Two 3x3 convolutions followed by a dense classifier. The second
    /// convolution is quantized.
    pub fn small_cnn(
        channels: usize,
        height: usize,
        width: usize,
        hidden_channels: usize,
        classes: usize,
        bits: u8,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let c1 = he_init(vec![hidden_channels, channels, 3, 3], channels * 9, rng)?;
        let c2 = he_init(
            vec![hidden_channels, hidden_channels, 3, 3],
            hidden_channels * 9,
            rng,
        )?;
        let flat = hidden_channels * height * width;
        let d = he_init(vec![classes, flat], flat, rng)?;
        Self::new(vec![
            QuantizedLayer::conv2d(c1, 1, bits)?.with_activation(Activation::Relu),
            QuantizedLayer::conv2d(c2, 1, bits)?
                .with_activation(Activation::Relu)
                .with_quantization(true, true),
            QuantizedLayer::dense(d, bits)?,
        ])
    }

    pub fn layers(&self) -> &[QuantizedLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [QuantizedLayer] {
        &mut self.layers
    }

    /// Every active quantizer as `(layer index, site)`, in a fixed order.
    pub fn quantizers(&self) -> Vec<(usize, QuantSite)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.quantize_weights {
                out.push((i, QuantSite::Weights));
            }
            if layer.quantize_acts {
                out.push((i, QuantSite::Activations));
            }
        }
        out
    }

    pub fn quant_params(&self, layer: usize, site: QuantSite) -> &QuantParams {
        match site {
            QuantSite::Weights => &self.layers[layer].weight_qp,
            QuantSite::Activations => &self.layers[layer].act_qp,
        }
    }

    pub fn quant_params_mut(&mut self, layer: usize, site: QuantSite) -> &mut QuantParams {
        match site {
            QuantSite::Weights => &mut self.layers[layer].weight_qp,
            QuantSite::Activations => &mut self.layers[layer].act_qp,
        }
    }

    /// Sets alpha on every active quantizer (clamped into range).
    pub fn set_alpha(&mut self, alpha: f64) {
        for (i, site) in self.quantizers() {
            self.quant_params_mut(i, site).set_alpha_clamped(alpha);
        }
    }

    pub fn forward(&self, input: &Tensor, pass: &QuantPass) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward_cached(&x, pass)?.0;
        }
        Ok(x)
    }

    /// Forward pass that lets `observe` inspect (and adjust) each active
    /// quantizer right before it sees its operand.
    pub(crate) fn forward_observed(
        &mut self,
        input: &Tensor,
        pass: &QuantPass,
        observe: &mut dyn FnMut(usize, QuantSite, &Tensor, &mut QuantParams),
    ) -> Result<(Tensor, Vec<LayerCache>)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if layer.quantize_weights {
                observe(i, QuantSite::Weights, &layer.weights, &mut layer.weight_qp);
            }
            if layer.quantize_acts {
                observe(i, QuantSite::Activations, &x, &mut layer.act_qp);
            }
            let (y, cache) = layer.forward_cached(&x, pass)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Objective (mean cross-entropy plus `alpha_reg * sum(alpha^2)`),
    /// batch accuracy and all gradients.
    pub fn loss_and_grads(
        &self,
        input: &Tensor,
        labels: &[usize],
        pass: &QuantPass,
    ) -> Result<BatchResult> {
        let mut scratch = self.clone();
        scratch.batch_step(input, labels, pass, &mut |_, _, _, _| {})
    }

    pub(crate) fn batch_step(
        &mut self,
        input: &Tensor,
        labels: &[usize],
        pass: &QuantPass,
        observe: &mut dyn FnMut(usize, QuantSite, &Tensor, &mut QuantParams),
    ) -> Result<BatchResult> {
        let (logits, caches) = self.forward_observed(input, pass, observe)?;
        let (ce, accuracy, mut grad) = softmax_cross_entropy(&logits, labels)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        for (layer, cache) in self.layers.iter().zip(&caches).rev() {
            let g = layer.backward(cache, &grad, pass)?;
            grad = g.d_input.clone();
            grads.push(g);
        }
        grads.reverse();
        let penalty: f64 = self
            .quantizers()
            .iter()
            .map(|&(i, s)| self.quant_params(i, s).alpha().powi(2))
            .sum::<f64>()
            * pass.alpha_reg;
        Ok(BatchResult {
            loss: ce + penalty,
            accuracy,
            grads,
        })
    }

    /// Scalar objective only; used by gradient checks.
    pub fn loss(&self, input: &Tensor, labels: &[usize], pass: &QuantPass) -> Result<f64> {
        let logits = self.forward(input, pass)?;
        let (ce, _, _) = softmax_cross_entropy(&logits, labels)?;
        let penalty: f64 = self
            .quantizers()
            .iter()
            .map(|&(i, s)| self.quant_params(i, s).alpha().powi(2))
            .sum::<f64>()
            * pass.alpha_reg;
        Ok(ce + penalty)
    }

    pub fn predict(&self, input: &Tensor, pass: &QuantPass) -> Result<Vec<usize>> {
        let logits = self.forward(input, pass)?;
        Ok(argmax_rows(&logits))
    }

    pub fn accuracy(&self, input: &Tensor, labels: &[usize], pass: &QuantPass) -> Result<f64> {
        let pred = self.predict(input, pass)?;
        if pred.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![pred.len()],
                actual: vec![labels.len()],
            });
        }
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn he_init(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let len = shape.iter().product();
    let data = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data)
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = logits.row_len();
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean softmax cross-entropy, accuracy and gradient w.r.t. the logits.
fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, f64, Tensor)> {
    let n = logits.rows();
    let classes = logits.row_len();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            expected: vec![n],
            actual: vec![labels.len()],
        });
    }
    let mut grad = vec![0.0; n * classes];
    let mut loss = 0.0;
    let mut hits = 0usize;
    for (s, (row, &label)) in logits.data().chunks(classes).zip(labels).enumerate() {
        if label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} outside {classes} classes"
            )));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            grad[s * classes + j] = (v - log_sum).exp() / n as f64;
            if v > row[best] {
                best = j;
            }
        }
        grad[s * classes + label] -= 1.0 / n as f64;
        if best == label {
            hits += 1;
        }
    }
    Ok((
        loss / n as f64,
        hits as f64 / n as f64,
        Tensor::from_parts_unchecked(vec![n, classes], grad),
    ))
}
