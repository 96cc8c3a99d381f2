use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quant::{QuantParams, ALPHA_INIT, ALPHA_MAX, ALPHA_MIN};
use crate::tensor::Tensor;

use super::clip::{ClipPolicy, ClipTracker};
use super::data::Dataset;
use super::fake_quant::{ForwardMode, GradientRule};
use super::layer::{QuantPass, QuantScalarGrads};
use super::network::{Network, QuantSite};
use super::trace::{TrainRecord, TrainTrace};

/// Gradient estimator used for the quantized operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Method {
    /// Differentiable soft quantization: hard forward, analytic backward.
    #[default]
    Dsq,
    /// Uniform rounding forward, straight-through backward.
    Ste,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dsq => "dsq",
            Self::Ste => "ste",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dsq" => Ok(Self::Dsq),
            "ste" => Ok(Self::Ste),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (expected dsq or ste)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub alpha_init: f64,
    /// Coefficient of the `sum(alpha^2)` penalty.
    pub alpha_reg: f64,
    pub clip_policy: ClipPolicy,
    pub ma_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Update alpha by gradient descent; otherwise it stays at `alpha_init`.
    pub learn_alpha: bool,
    pub method: Method,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            alpha_init: ALPHA_INIT,
            alpha_reg: 1e-4,
            clip_policy: ClipPolicy::Learned,
            ma_decay: 0.9,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            learn_alpha: true,
            method: Method::Dsq,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        // Zero is allowed: it turns training into a pure evaluation loop.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.alpha_init > ALPHA_MIN && self.alpha_init < ALPHA_MAX) {
            return Err(Error::AlphaOutOfRange {
                alpha: self.alpha_init,
                min: ALPHA_MIN,
                max: ALPHA_MAX,
            });
        }
        if !(self.alpha_reg >= 0.0 && self.alpha_reg.is_finite()) {
            return bad(format!(
                "alpha regularization {} must be finite and non-negative",
                self.alpha_reg
            ));
        }
        if !(self.ma_decay > 0.0 && self.ma_decay < 1.0) {
            return bad(format!(
                "moving-average decay {} outside (0, 1)",
                self.ma_decay
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        Ok(())
    }

    /// Pass used for the training steps.
    pub fn train_pass(&self) -> QuantPass {
        match self.method {
            Method::Dsq => QuantPass {
                forward: ForwardMode::Hard,
                gradient: GradientRule::Dsq,
                alpha_reg: self.alpha_reg,
            },
            Method::Ste => QuantPass {
                forward: ForwardMode::Uniform,
                gradient: GradientRule::Ste,
                alpha_reg: self.alpha_reg,
            },
        }
    }

    /// Pass used for evaluation (no regularization term in the loss).
    pub fn eval_pass(&self) -> QuantPass {
        QuantPass {
            alpha_reg: 0.0,
            ..self.train_pass()
        }
    }

    fn learns_alpha(&self) -> bool {
        self.learn_alpha && self.method == Method::Dsq
    }
}

/// Smallest allowed `u - l`, relative to the magnitude of the bounds.
const MIN_CLIP_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
struct QuantVelocity {
    alpha: f64,
    lower: f64,
    upper: f64,
}

struct LayerVelocity {
    weights: Vec<f64>,
    bias: Vec<f64>,
    wq: QuantVelocity,
    aq: QuantVelocity,
}

fn step_value(p: &mut f64, v: &mut f64, g: f64, lr: f64, mu: f64) {
    *v = mu * *v + g;
    *p -= lr * *v;
}

fn update_quantizer(
    qp: &mut QuantParams,
    g: &QuantScalarGrads,
    v: &mut QuantVelocity,
    cfg: &TrainConfig,
    learn_clip: bool,
) -> Result<()> {
    let (lr, mu) = (cfg.learning_rate, cfg.momentum);
    if cfg.learns_alpha() {
        let mut a = qp.alpha();
        step_value(&mut a, &mut v.alpha, g.alpha, lr, mu);
        qp.set_alpha_clamped(a);
    }
    if learn_clip {
        let (mut l, mut u) = (qp.lower(), qp.upper());
        step_value(&mut l, &mut v.lower, g.lower, lr, mu);
        step_value(&mut u, &mut v.upper, g.upper, lr, mu);
        if !l.is_finite() || !u.is_finite() {
            return Err(Error::NonFinite {
                context: "clipping bound update",
                value: if l.is_finite() { u } else { l },
            });
        }
        let gap = MIN_CLIP_GAP * l.abs().max(u.abs()).max(1.0);
        if u - l < gap {
            let mid = 0.5 * (l + u);
            l = mid - 0.5 * gap;
            u = mid + 0.5 * gap;
        }
        qp.set_range(l, u)?;
    }
    Ok(())
}

/// Mini-batch SGD with momentum over shuffled epochs. Weights, biases and,
/// depending on `cfg`, every quantizer's alpha and clipping bounds are
/// updated each step. Alpha is clamped into its open range after every
/// update. The result depends only on the inputs and `cfg.seed`.
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    net.set_alpha(cfg.alpha_init);
    let sites = net.quantizers();
    let mut trackers = sites
        .iter()
        .map(|_| ClipTracker::new(cfg.clip_policy, cfg.ma_decay))
        .collect::<Result<Vec<_>>>()?;
    let mut velocity: Vec<LayerVelocity> = net
        .layers()
        .iter()
        .map(|l| LayerVelocity {
            weights: vec![0.0; l.weights.len()],
            bias: vec![0.0; l.bias.len()],
            wq: QuantVelocity::default(),
            aq: QuantVelocity::default(),
        })
        .collect();
    let learn_clip = cfg.clip_policy == ClipPolicy::Learned;
    let pass = cfg.train_pass();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainTrace::new(sites.clone());
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk);
            let mut clip_err = None;
            let mut observe = |layer: usize, site: QuantSite, t: &Tensor, qp: &mut QuantParams| {
                let Some(pos) = sites.iter().position(|&s| s == (layer, site)) else {
                    return;
                };
                let tracker = &mut trackers[pos];
                let first = !tracker.is_initialized();
                let res = tracker.observe(t).and_then(|(l, u)| {
                    // Learned bounds only take the statistics once.
                    if first || !learn_clip {
                        qp.set_range(l, u)
                    } else {
                        Ok(())
                    }
                });
                if let Err(e) = res {
                    clip_err.get_or_insert(e);
                }
            };
            let result = match net.batch_step(&x, &y, &pass, &mut observe) {
                Ok(r) => r,
                Err(Error::NonFinite { value, .. }) => {
                    return Err(Error::Diverged { step, loss: value })
                }
                Err(e) => return Err(e),
            };
            if let Some(e) = clip_err {
                return Err(match e {
                    Error::NonFinite { value, .. } => Error::Diverged { step, loss: value },
                    other => other,
                });
            }
            if !result.loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: result.loss,
                });
            }

            let (lr, mu) = (cfg.learning_rate, cfg.momentum);
            for ((layer, g), v) in net
                .layers_mut()
                .iter_mut()
                .zip(&result.grads)
                .zip(&mut velocity)
            {
                for ((w, &gw), vw) in layer
                    .weights
                    .data_mut()
                    .iter_mut()
                    .zip(g.d_weights.data())
                    .zip(&mut v.weights)
                {
                    step_value(w, vw, gw, lr, mu);
                }
                for ((b, &gb), vb) in layer.bias.iter_mut().zip(&g.d_bias).zip(&mut v.bias) {
                    step_value(b, vb, gb, lr, mu);
                }
                if !layer.weights.all_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                    return Err(Error::Diverged {
                        step,
                        loss: result.loss,
                    });
                }
                let diverged = |e: Error| match e {
                    Error::NonFinite { .. } | Error::InvalidRange { .. } => Error::Diverged {
                        step,
                        loss: result.loss,
                    },
                    other => other,
                };
                if layer.quantize_weights {
                    update_quantizer(&mut layer.weight_qp, &g.weight, &mut v.wq, cfg, learn_clip)
                        .map_err(diverged)?;
                }
                if layer.quantize_acts {
                    update_quantizer(&mut layer.act_qp, &g.act, &mut v.aq, cfg, learn_clip)
                        .map_err(diverged)?;
                }
            }

            let alphas = sites
                .iter()
                .map(|&(l, s)| net.quant_params(l, s).alpha())
                .collect();
            trace.records.push(TrainRecord {
                step,
                epoch,
                loss: result.loss,
                accuracy: result.accuracy,
                alphas,
            });
            step += 1;
        }
        if let Some(r) = trace.last() {
            log::debug!(
                "epoch {epoch}: loss {:.6} batch accuracy {:.4}",
                r.loss,
                r.accuracy
            );
        }
    }
    Ok(trace)
}

/// Mean loss (without the alpha penalty) and accuracy over a whole dataset.
pub fn evaluate(net: &Network, data: &Dataset, pass: &QuantPass) -> Result<(f64, f64)> {
    let pass = QuantPass {
        alpha_reg: 0.0,
        ..*pass
    };
    let loss = net.loss(&data.inputs, &data.labels, &pass)?;
    let accuracy = net.accuracy(&data.inputs, &data.labels, &pass)?;
    Ok((loss, accuracy))
}
