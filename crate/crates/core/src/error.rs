use std::io;

/// Errors produced by the quantization, training and GEMM routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value {value} in {context}")]
    NonFinite { context: &'static str, value: f64 },

    #[error("bit width {0} outside supported range {1}")]
    UnsupportedBits(u32, &'static str),

    #[error("invalid clipping range: lower {lower} must be strictly below upper {upper}")]
    InvalidRange { lower: f64, upper: f64 },

    #[error("alpha {alpha} outside the open interval ({min}, {max})")]
    AlphaOutOfRange { alpha: f64, min: f64, max: f64 },

    #[error("x = {x} does not lie in quantization interval {interval}")]
    IntervalMismatch { x: f64, interval: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("config error at line {line}: key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(context: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { context, value })
    }
}
