//! Run configuration: flat `key = value` lines grouped under `[section]`
//! headers. `#` starts a comment. Unknown sections and keys are errors.
//!
//! ```text
//! [data]
//! kind = moons          # moons | blobs | idx
//! samples = 512
//! noise = 0.15
//! seed = 1
//!
//! [model]
//! arch = mlp            # mlp | cnn
//! hidden = 32, 32
//!
//! [quant]
//! bits = 2
//! alpha_init = 0.2
//! clip_policy = learned
//! learn_alpha = true
//! method = dsq
//!
//! [train]
//! learning_rate = 0.05
//! epochs = 100
//!
//! [output]
//! trace = trace.tsv
//! model = model.dsqa
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    gaussian_blobs, load_idx_dataset, two_moons, ClipPolicy, Dataset, Method, Network, TrainConfig,
};
use crate::quant::{ALPHA_MAX, ALPHA_MIN};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Moons {
        samples: usize,
        noise: f64,
    },
    Blobs {
        samples: usize,
        classes: usize,
        dims: usize,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub source: DataSource,
    pub seed: u64,
    /// Held-out samples, drawn together with the training set and split off
    /// the end.
    /// Ignored for IDX data.
    pub test_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Hidden widths (MLP) or channel count (CNN, first entry).
    pub hidden: Vec<usize>,
    pub bits: u8,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputSpec {
    pub trace: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub output: OutputSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSpec {
                source: DataSource::Moons {
                    samples: 512,
                    noise: 0.15,
                },
                seed: 1,
                test_samples: 0,
            },
            model: ModelSpec {
                arch: Arch::Mlp,
                hidden: vec![32, 32],
                bits: 2,
                seed: 0,
            },
            train: TrainConfig::default(),
            output: OutputSpec::default(),
        }
    }
}

#[derive(Default)]
struct RawData {
    kind: Option<String>,
    samples: Option<usize>,
    noise: Option<f64>,
    classes: Option<usize>,
    dims: Option<usize>,
    spread: Option<f64>,
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config {
        line,
        key: key.into(),
        message: format!("cannot parse `{value}`: {e}"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            key: key.into(),
            message: format!("expected true or false, got `{value}`"),
        }),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        // relative paths are resolved against the config file
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            if let DataSource::Idx { images, labels } = &mut cfg.data.source {
                fix(images);
                fix(labels);
            }
            cfg.output.trace.as_mut().map(fix);
            cfg.output.model.as_mut().map(fix);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut raw = RawData::default();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["data", "model", "quant", "train", "output"].contains(&name) {
                    return Err(Error::Config {
                        line: line_no,
                        key: format!("[{name}]"),
                        message: "unknown section".into(),
                    });
                }
                section = name.to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: line_no,
                    key: line.into(),
                    message: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(&mut raw, &section, line_no, key, value)?;
        }
        cfg.data.source = raw.into_source(&cfg.data.source)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(
        &mut self,
        raw: &mut RawData,
        section: &str,
        line: usize,
        key: &str,
        value: &str,
    ) -> Result<()> {
        let t = &mut self.train;
        let full = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        let unknown = || Error::Config {
            line,
            key: full.clone(),
            message: "unknown key".into(),
        };
        match section {
            "data" => match key {
                "kind" => raw.kind = Some(value.to_string()),
                "samples" => raw.samples = Some(parse_value(line, &full, value)?),
                "noise" => raw.noise = Some(parse_value(line, &full, value)?),
                "classes" => raw.classes = Some(parse_value(line, &full, value)?),
                "dims" => raw.dims = Some(parse_value(line, &full, value)?),
                "spread" => raw.spread = Some(parse_value(line, &full, value)?),
                "images" => raw.images = Some(PathBuf::from(value)),
                "labels" => raw.labels = Some(PathBuf::from(value)),
                "seed" => self.data.seed = parse_value(line, &full, value)?,
                "test_samples" => self.data.test_samples = parse_value(line, &full, value)?,
                _ => return Err(unknown()),
            },
            "model" => match key {
                "arch" => {
                    self.model.arch = match value {
                        "mlp" => Arch::Mlp,
                        "cnn" => Arch::Cnn,
                        _ => {
                            return Err(Error::Config {
                                line,
                                key: full,
                                message: format!("expected mlp or cnn, got `{value}`"),
                            })
                        }
                    }
                }
                "hidden" => {
                    self.model.hidden = value
                        .split(',')
                        .map(|v| parse_value::<usize>(line, &full, v.trim()))
                        .collect::<Result<Vec<_>>>()?;
                    if self.model.hidden.contains(&0) {
                        return Err(Error::Config {
                            line,
                            key: full,
                            message: "widths must be positive".into(),
                        });
                    }
                }
                "seed" => self.model.seed = parse_value(line, &full, value)?,
                _ => return Err(unknown()),
            },
            "quant" => match key {
                "bits" => {
                    let bits: u8 = parse_value(line, &full, value)?;
                    if !(1..=8).contains(&bits) {
                        return Err(Error::Config {
                            line,
                            key: full,
                            message: format!("bits {bits} outside 1..=8"),
                        });
                    }
                    self.model.bits = bits;
                }
                "alpha_init" => {
                    let a: f64 = parse_value(line, &full, value)?;
                    if !(a > ALPHA_MIN && a < ALPHA_MAX) {
                        return Err(Error::Config {
                            line,
                            key: full,
                            message: format!(
                                "{a} outside the open range ({ALPHA_MIN}, {ALPHA_MAX})"
                            ),
                        });
                    }
                    t.alpha_init = a;
                }
                "alpha_reg" => t.alpha_reg = parse_value(line, &full, value)?,
                "clip_policy" => t.clip_policy = parse_value::<ClipPolicy>(line, &full, value)?,
                "ma_decay" => t.ma_decay = parse_value(line, &full, value)?,
                "learn_alpha" => t.learn_alpha = parse_bool(line, &full, value)?,
                "method" => t.method = parse_value::<Method>(line, &full, value)?,
                _ => return Err(unknown()),
            },
            "train" => match key {
                "learning_rate" => t.learning_rate = parse_value(line, &full, value)?,
                "momentum" => t.momentum = parse_value(line, &full, value)?,
                "epochs" => t.epochs = parse_value(line, &full, value)?,
                "batch_size" => t.batch_size = parse_value(line, &full, value)?,
                "seed" => t.seed = parse_value(line, &full, value)?,
                _ => return Err(unknown()),
            },
            "output" => match key {
                "trace" => self.output.trace = Some(PathBuf::from(value)),
                "model" => self.output.model = Some(PathBuf::from(value)),
                _ => return Err(unknown()),
            },
            _ => {
                return Err(Error::Config {
                    line,
                    key: full,
                    message: "key outside any section".into(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| Error::Config {
            line: 0,
            key: "train".into(),
            message: e.to_string(),
        })?;
        if self.model.hidden.is_empty() {
            return Err(Error::Config {
                line: 0,
                key: "model.hidden".into(),
                message: "at least one hidden layer is required".into(),
            });
        }
        if self.model.arch == Arch::Mlp && self.model.hidden.len() < 2 {
            return Err(Error::Config {
                line: 0,
                key: "model.hidden".into(),
                message: "an MLP needs two hidden layers to have a quantized layer".into(),
            });
        }
        Ok(())
    }

    /// Training set and optional held-out set.
    pub fn datasets(&self) -> Result<(Dataset, Option<Dataset>)> {
        let make = |samples: usize, seed: u64| -> Result<Dataset> {
            match &self.data.source {
                DataSource::Moons { noise, .. } => two_moons(samples, *noise, seed),
                DataSource::Blobs {
                    classes,
                    dims,
                    spread,
                    ..
                } => gaussian_blobs(samples, *classes, *dims, *spread, seed),
                DataSource::Idx { images, labels } => load_idx_dataset(images, labels),
            }
        };
        match &self.data.source {
            DataSource::Idx { .. } => Ok((make(0, 0)?, None)),
            DataSource::Moons { samples, .. } | DataSource::Blobs { samples, .. } => {
                if self.data.test_samples == 0 {
                    return Ok((make(*samples, self.data.seed)?, None));
                }
                // One draw, so blob centres are shared by both halves.
                let (train, test) =
                    make(samples + self.data.test_samples, self.data.seed)?.split(*samples)?;
                Ok((train, Some(test)))
            }
        }
    }

    pub fn build_network(&self, data: &Dataset) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.model.seed);
        let shape = data.sample_shape();
        match self.model.arch {
            Arch::Mlp => {
                let inputs = shape.iter().product();
                Network::mlp(
                    inputs,
                    &self.model.hidden,
                    data.classes,
                    self.model.bits,
                    &mut rng,
                )
            }
            Arch::Cnn => {
                let [c, h, w] = *shape else {
                    return Err(Error::InvalidArgument(format!(
                        "cnn needs [channels, height, width] samples, got {shape:?}"
                    )));
                };
                Network::small_cnn(
                    c,
                    h,
                    w,
                    self.model.hidden[0],
                    data.classes,
                    self.model.bits,
                    &mut rng,
                )
            }
        }
    }
}

impl RawData {
    fn into_source(self, default: &DataSource) -> Result<DataSource> {
        let kind = self.kind.as_deref().unwrap_or(match default {
            DataSource::Moons { .. } => "moons",
            DataSource::Blobs { .. } => "blobs",
            DataSource::Idx { .. } => "idx",
        });
        let cfg_err = |key: &str, message: &str| Error::Config {
            line: 0,
            key: key.into(),
            message: message.into(),
        };
        Ok(match kind {
            "moons" => DataSource::Moons {
                samples: self.samples.unwrap_or(512),
                noise: self.noise.unwrap_or(0.15),
            },
            "blobs" => DataSource::Blobs {
                samples: self.samples.unwrap_or(512),
                classes: self.classes.unwrap_or(3),
                dims: self.dims.unwrap_or(2),
                spread: self.spread.unwrap_or(0.3),
            },
            "idx" => DataSource::Idx {
                images: self
                    .images
                    .ok_or_else(|| cfg_err("data.images", "required for idx data"))?,
                labels: self
                    .labels
                    .ok_or_else(|| cfg_err("data.labels", "required for idx data"))?,
            },
            other => {
                return Err(cfg_err(
                    "data.kind",
                    &format!("expected moons, blobs or idx, got `{other}`"),
                ))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = RunConfig::parse(
            "[data]\nkind = blobs\nsamples = 90\nclasses = 3\n[model]\nhidden = 8, 8 # two layers\n\
             [quant]\nbits = 3\nalpha_init = 0.1\nclip_policy = ma\nlearn_alpha = false\nmethod = ste\n\
             [train]\nlearning_rate = 0.01\nepochs = 4\nbatch_size = 10\nseed = 5\n[output]\ntrace = t.tsv\n",
        )
        .unwrap();
        assert_eq!(
            cfg.data.source,
            DataSource::Blobs {
                samples: 90,
                classes: 3,
                dims: 2,
                spread: 0.3
            }
        );
        assert_eq!(cfg.model.bits, 3);
        assert_eq!(cfg.train.clip_policy, ClipPolicy::MovingAverage);
        assert!(!cfg.train.learn_alpha);
        assert_eq!(cfg.train.method, Method::Ste);
        assert_eq!(cfg.output.trace.as_deref(), Some(Path::new("t.tsv")));
        let (d, _) = cfg.datasets().unwrap();
        let net = cfg.build_network(&d).unwrap();
        assert_eq!(net.layers().len(), 3);
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::parse("[quant]\nalpha_init = 0.7\n")
            .unwrap_err()
            .to_string();
        assert!(
            e.contains("quant.alpha_init") && e.contains("line 2"),
            "{e}"
        );
        let e = RunConfig::parse("[train]\nlearning_rat = 1\n")
            .unwrap_err()
            .to_string();
        assert!(
            e.contains("train.learning_rat") && e.contains("unknown key"),
            "{e}"
        );
        assert!(RunConfig::parse("[bogus]\n").is_err());
        assert!(RunConfig::parse("epochs = 3\n").is_err());
        assert!(RunConfig::parse("[train]\nepochs = many\n").is_err());
    }
}
