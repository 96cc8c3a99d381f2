//! Training trace in a plain tab-separated format:
//!
//! ```text
//! # dsq-trace v1
//! step	epoch	loss	accuracy	alpha_w.1	alpha_a.1
//! 0	0	0.6931471805599453	0.5	0.2	0.2
//! ```
//!
//! One line per optimizer step. `alpha_w.L` / `alpha_a.L` hold the weight and
//! activation alpha of layer `L` after that step's update. Floats use the
//! shortest representation that round-trips.

#![allow(clippy::tabs_in_doc_comments)]

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::error::{Error, Result};

use super::network::QuantSite;

pub const TRACE_HEADER: &str = "# dsq-trace v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// One alpha per entry of [`TrainTrace::sites`].
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub sites: Vec<(usize, QuantSite)>,
    pub records: Vec<TrainRecord>,
}

fn column_name(layer: usize, site: QuantSite) -> String {
    match site {
        QuantSite::Weights => format!("alpha_w.{layer}"),
        QuantSite::Activations => format!("alpha_a.{layer}"),
    }
}

fn parse_column(name: &str) -> Option<(usize, QuantSite)> {
    let (site, layer) = if let Some(rest) = name.strip_prefix("alpha_w.") {
        (QuantSite::Weights, rest)
    } else {
        (QuantSite::Activations, name.strip_prefix("alpha_a.")?)
    };
    Some((layer.parse().ok()?, site))
}

impl TrainTrace {
    pub fn new(sites: Vec<(usize, QuantSite)>) -> Self {
        Self {
            sites,
            records: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    /// Alpha history of one quantizer.
    pub fn alpha_series(&self, layer: usize, site: QuantSite) -> Option<Vec<f64>> {
        let col = self.sites.iter().position(|&s| s == (layer, site))?;
        Some(self.records.iter().map(|r| r.alphas[col]).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(TRACE_HEADER);
        out.push('\n');
        out.push_str("step\tepoch\tloss\taccuracy");
        for &(l, s) in &self.sites {
            out.push('\t');
            out.push_str(&column_name(l, s));
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}\t{}\t{}\t{}", r.step, r.epoch, r.loss, r.accuracy);
            for a in &r.alphas {
                let _ = write!(out, "\t{a}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(self.to_text().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Format {
            format: "trace",
            message: format!("line {line}: {message}"),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == TRACE_HEADER => {}
            _ => return Err(err(1, format!("expected `{TRACE_HEADER}`"))),
        }
        let (_, cols) = lines
            .next()
            .ok_or_else(|| err(2, "missing column header".into()))?;
        let cols: Vec<&str> = cols.split('\t').collect();
        if cols.len() < 4 || cols[..4] != ["step", "epoch", "loss", "accuracy"] {
            return Err(err(
                2,
                "expected step, epoch, loss, accuracy columns".into(),
            ));
        }
        let sites = cols[4..]
            .iter()
            .map(|c| parse_column(c).ok_or_else(|| err(2, format!("unknown column `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut trace = Self::new(sites);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != cols.len() {
                return Err(err(
                    idx + 1,
                    format!("expected {} fields, found {}", cols.len(), fields.len()),
                ));
            }
            let float = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| err(idx + 1, format!("`{s}`: {e}")))
            };
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| err(idx + 1, format!("`{s}`: {e}")))
            };
            trace.records.push(TrainRecord {
                step: int(fields[0])?,
                epoch: int(fields[1])?,
                loss: float(fields[2])?,
                accuracy: float(fields[3])?,
                alphas: fields[4..]
                    .iter()
                    .map(|s| float(s))
                    .collect::<Result<_>>()?,
            });
        }
        Ok(trace)
    }
}
