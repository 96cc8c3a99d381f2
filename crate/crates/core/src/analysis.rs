//! Diagnostics: error decomposition, alpha sweeps, value histograms and
//! per-layer alpha tables. Every report renders as an aligned text table
//! and as CSV with a header row, one record per line.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::{Dataset, ForwardMode, GradientRule, Network, QuantPass, QuantSite, TrainTrace};
use crate::quant::{dsq_hard_quantize, dsq_quantize, uniform_quantize, QuantParams};
use crate::tensor::Tensor;

/// Mean squared quantization error split by whether an element was clipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDecomposition {
    pub clipping_error: f64,
    pub rounding_error: f64,
    pub total: f64,
    pub clipped_fraction: f64,
}

pub fn decompose_error(t: &Tensor, qp: &QuantParams) -> Result<ErrorDecomposition> {
    if t.is_empty() {
        return Err(Error::Empty("error decomposition"));
    }
    let (mut clip, mut round, mut clipped) = (0.0, 0.0, 0usize);
    for &x in t.data() {
        let e = uniform_quantize(x, qp) - x;
        if x < qp.lower() || x > qp.upper() {
            clip += e * e;
            clipped += 1;
        } else {
            round += e * e;
        }
    }
    let n = t.len() as f64;
    let (clipping_error, rounding_error) = (clip / n, round / n);
    Ok(ErrorDecomposition {
        clipping_error,
        rounding_error,
        total: clipping_error + rounding_error,
        clipped_fraction: clipped as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    /// Alpha actually applied (after clamping).
    pub alpha: f64,
    pub soft: f64,
    pub sign: f64,
    pub uniform: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Index of the row where soft and uniform accuracy are closest; the
    /// first one wins ties.
    pub fn closest_to_uniform(&self) -> Option<usize> {
        let gap = |r: &SweepRow| (r.soft - r.uniform).abs();
        (0..self.rows.len()).reduce(|best, i| {
            if gap(&self.rows[i]) < gap(&self.rows[best]) {
                i
            } else {
                best
            }
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,acc_soft,acc_sign,acc_uniform\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.alpha, r.soft, r.sign, r.uniform);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:>10} {:>10} {:>10} {:>10}\n",
            "alpha", "soft", "sign", "uniform"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                r.alpha, r.soft, r.sign, r.uniform
            );
        }
        out
    }
}

/// Accuracy of `net` on `data` with every quantizer set to each alpha,
/// under the soft quantizer, the soft quantizer plus sign, and plain
/// rounding.
pub fn alpha_sweep(net: &Network, data: &Dataset, alphas: &[f64]) -> Result<SweepResult> {
    let pass = |forward| QuantPass {
        forward,
        gradient: GradientRule::Dsq,
        alpha_reg: 0.0,
    };
    let mut rows = Vec::with_capacity(alphas.len());
    let sites = net.quantizers();
    for &alpha in alphas {
        let mut n = net.clone();
        n.set_alpha(alpha);
        let applied = sites
            .first()
            .map_or(alpha, |&(l, s)| n.quant_params(l, s).alpha());
        rows.push(SweepRow {
            alpha: applied,
            soft: n.accuracy(&data.inputs, &data.labels, &pass(ForwardMode::Soft))?,
            sign: n.accuracy(&data.inputs, &data.labels, &pass(ForwardMode::Hard))?,
            uniform: n.accuracy(&data.inputs, &data.labels, &pass(ForwardMode::Uniform))?,
        });
    }
    Ok(SweepResult { rows })
}

/// Raw values, soft-quantized values and hard-quantized values binned on a
/// common grid. The grid spans `[l - delta/2, u + delta/2]`; values beyond
/// it land in the end bins. When `bins` is a multiple of `2^b` every level
/// sits at the same offset inside its own group of bins.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramReport {
    pub edges: Vec<f64>,
    pub before: Vec<u64>,
    pub after_dsq: Vec<u64>,
    pub after_sign: Vec<u64>,
}

impl HistogramReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,before,after_dsq,after_sign\n");
        for b in 0..self.before.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.edges[b],
                self.edges[b + 1],
                self.before[b],
                self.after_dsq[b],
                self.after_sign[b]
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:>12} {:>12} {:>8} {:>8} {:>8}\n",
            "lo", "hi", "before", "dsq", "sign"
        );
        for b in 0..self.before.len() {
            let _ = writeln!(
                out,
                "{:>12.5} {:>12.5} {:>8} {:>8} {:>8}",
                self.edges[b],
                self.edges[b + 1],
                self.before[b],
                self.after_dsq[b],
                self.after_sign[b]
            );
        }
        out
    }
}

pub fn histogram_report(t: &Tensor, qp: &QuantParams, bins: usize) -> Result<HistogramReport> {
    if bins < qp.levels() {
        return Err(Error::InvalidArgument(format!(
            "{bins} bins cannot separate {} levels",
            qp.levels()
        )));
    }
    if t.is_empty() {
        return Err(Error::Empty("histogram"));
    }
    let lo = qp.lower() - 0.5 * qp.delta();
    let width = qp.levels() as f64 * qp.delta() / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
    let bin_of = |v: f64| (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
    let count = |f: &dyn Fn(f64) -> f64| {
        let mut h = vec![0u64; bins];
        for &x in t.data() {
            h[bin_of(f(x))] += 1;
        }
        h
    };
    Ok(HistogramReport {
        before: count(&|x| x),
        after_dsq: count(&|x| dsq_quantize(x, qp)),
        after_sign: count(&|x| dsq_hard_quantize(x, qp)),
        edges,
    })
}

/// Fraction of values within `radius * delta` of some quantization level.
pub fn mass_near_levels(values: &[f64], qp: &QuantParams, radius: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let tol = radius * qp.delta();
    let near = values
        .iter()
        .filter(|&&v| (0..qp.levels()).any(|j| (v - qp.level(j)).abs() <= tol))
        .count();
    near as f64 / values.len() as f64
}

/// Outcome of an empirical (non-contractual) check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Pass,
    Warn,
    NotApplicable,
}

impl Observation {
    pub fn label(self) -> &'static str {
        match self {
            Self::Pass => "PASS",
            Self::Warn => "WARN",
            Self::NotApplicable => "N/A",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaRow {
    pub layer: usize,
    pub weight: Option<f64>,
    pub activation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTable {
    pub rows: Vec<AlphaRow>,
    /// Whether the mean weight alpha is below the mean activation alpha.
    pub weights_below_activations: Observation,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl AlphaTable {
    pub fn mean_weight(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.weight))
    }

    pub fn mean_activation(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.activation))
    }

    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        let mut out = format!("{:<10} {:>10} {:>10}\n", "Layer", "Weight", "Activation");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:>10}",
                format!("layer{}", r.layer),
                cell(r.weight),
                cell(r.activation)
            );
        }
        let _ = writeln!(
            out,
            "# mean weight alpha < mean activation alpha: {}",
            self.weights_below_activations.label()
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(String::new, |a| a.to_string());
        let mut out = String::from("layer,alpha_weight,alpha_activation\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.layer, cell(r.weight), cell(r.activation));
        }
        out
    }
}

/// Final alpha of every quantized layer, one row per layer.
pub fn alpha_table(trace: &TrainTrace) -> Result<AlphaTable> {
    let last = trace.last().ok_or(Error::Empty("training trace"))?;
    let mut rows: Vec<AlphaRow> = Vec::new();
    for (&(layer, site), &alpha) in trace.sites.iter().zip(&last.alphas) {
        let pos = match rows.iter().position(|r| r.layer == layer) {
            Some(p) => p,
            None => {
                rows.push(AlphaRow {
                    layer,
                    weight: None,
                    activation: None,
                });
                rows.len() - 1
            }
        };
        match site {
            QuantSite::Weights => rows[pos].weight = Some(alpha),
            QuantSite::Activations => rows[pos].activation = Some(alpha),
        }
    }
    rows.sort_by_key(|r| r.layer);
    let mut table = AlphaTable {
        rows,
        weights_below_activations: Observation::NotApplicable,
    };
    if let (Some(w), Some(a)) = (table.mean_weight(), table.mean_activation()) {
        table.weights_below_activations = if w < a {
            Observation::Pass
        } else {
            Observation::Warn
        };
    }
    Ok(table)
}

/// Alpha evolution as CSV: `step,epoch,loss,accuracy,alpha_w.L,...`.
pub fn trace_csv(trace: &TrainTrace) -> String {
    trace
        .to_text()
        .lines()
        .skip(1)
        .map(|l| l.replace('\t', ","))
        .fold(String::new(), |mut acc, l| {
            acc.push_str(&l);
            acc.push('\n');
            acc
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::TrainRecord;

    fn qp() -> QuantParams {
        QuantParams::new(2, -1.0, 1.0, 0.2).unwrap()
    }

    #[test]
    fn interior_data_has_no_clipping_error() {
        let t = Tensor::from_vec(vec![-0.9, -0.2, 0.1, 0.95]).unwrap();
        let d = decompose_error(&t, &qp()).unwrap();
        assert_eq!(d.clipping_error, 0.0);
        assert!(d.rounding_error > 0.0);
        let on_grid = Tensor::from_vec((0..4).map(|j| qp().level(j)).collect()).unwrap();
        assert_eq!(decompose_error(&on_grid, &qp()).unwrap().total, 0.0);
    }

    #[test]
    fn clipped_values_contribute_clipping_error() {
        let t = Tensor::from_vec(vec![-3.0, 2.0, 0.0]).unwrap();
        let d = decompose_error(&t, &qp()).unwrap();
        assert!((d.clipping_error - (4.0 + 1.0) / 3.0).abs() < 1e-15);
        assert!((d.clipped_fraction - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_sign_mass_on_levels() {
        let t =
            Tensor::from_vec((0..1000).map(|i| -1.5 + 3.0 * i as f64 / 999.0).collect()).unwrap();
        let h = histogram_report(&t, &qp(), 40).unwrap();
        assert_eq!(h.before.iter().sum::<u64>(), 1000);
        assert_eq!(h.after_dsq.iter().sum::<u64>(), 1000);
        assert!(h.after_sign.iter().filter(|&&c| c > 0).count() <= 4);
        assert!(histogram_report(&t, &qp(), 3).is_err());
        assert_eq!(h.to_csv().lines().count(), 41);
    }

    #[test]
    fn alpha_table_layout() {
        let mut tr = TrainTrace::new(vec![
            (2, QuantSite::Weights),
            (1, QuantSite::Weights),
            (1, QuantSite::Activations),
        ]);
        tr.records.push(TrainRecord {
            step: 0,
            epoch: 0,
            loss: 1.0,
            accuracy: 0.5,
            alphas: vec![0.1, 0.05, 0.3],
        });
        let t = alpha_table(&tr).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(
            t.rows[0],
            AlphaRow {
                layer: 1,
                weight: Some(0.05),
                activation: Some(0.3)
            }
        );
        assert_eq!(t.rows[1].activation, None);
        assert_eq!(t.weights_below_activations, Observation::Pass);
        assert!(t.to_text().contains("layer2"));
        assert!(alpha_table(&TrainTrace::default()).is_err());
    }
}
