pub mod analysis;
pub mod archive;
pub mod config;
pub mod error;
pub mod gemm;
pub mod nn;
pub mod quant;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
