//! IDX array files: two zero bytes, a type code, the dimension count, then
//! each dimension as a big-endian `u32`, then the values in big-endian order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxType {
    U8,
    I8,
    I16,
    I32,
    F32,
    F64,
}

impl IdxType {
    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0x08 => Self::U8,
            0x09 => Self::I8,
            0x0B => Self::I16,
            0x0C => Self::I32,
            0x0D => Self::F32,
            0x0E => Self::F64,
            other => return Err(fmt_err(format!("unknown type code 0x{other:02x}"))),
        })
    }

    pub fn code(self) -> u8 {
        match self {
            Self::U8 => 0x08,
            Self::I8 => 0x09,
            Self::I16 => 0x0B,
            Self::I32 => 0x0C,
            Self::F32 => 0x0D,
            Self::F64 => 0x0E,
        }
    }

    fn width(self) -> usize {
        match self {
            Self::U8 | Self::I8 => 1,
            Self::I16 => 2,
            Self::I32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

/// A decoded IDX array with values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub kind: IdxType,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

fn fmt_err(message: String) -> Error {
    Error::Format {
        format: "IDX",
        message,
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(fmt_err("bad magic".into()));
    }
    let kind = IdxType::from_code(bytes[2])?;
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(fmt_err("zero dimensions".into()));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(fmt_err("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fmt_err("dimension overflow".into()))?;
    let body = &bytes[header..];
    if body.len() != count * kind.width() {
        return Err(fmt_err(format!(
            "expected {} payload bytes, found {}",
            count * kind.width(),
            body.len()
        )));
    }
    let values = match kind {
        IdxType::U8 => body.iter().map(|&b| b as f64).collect(),
        IdxType::I8 => body.iter().map(|&b| b as i8 as f64).collect(),
        IdxType::I16 => body
            .chunks_exact(2)
            .map(|c| i16::from_be_bytes([c[0], c[1]]) as f64)
            .collect(),
        IdxType::I32 => body
            .chunks_exact(4)
            .map(|c| i32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        IdxType::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        IdxType::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(IdxArray { kind, dims, values })
}

/// Encodes unsigned bytes as an IDX array.
pub fn encode_idx_u8(dims: &[usize], values: &[u8]) -> Result<Vec<u8>> {
    if dims.is_empty() || dims.len() > 255 || dims.iter().product::<usize>() != values.len() {
        return Err(Error::InvalidArgument(
            "IDX dims do not match value count".into(),
        ));
    }
    let mut out = vec![0, 0, IdxType::U8.code(), dims.len() as u8];
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("IDX dimension {d} too large")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(values);
    Ok(out)
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&fs::read(path)?)
}

/// Loads an image/label pair. Images of shape `[n, h, w]` become
/// `[n, 1, h, w]` scaled by `1/255`; labels must be a 1-D array.
pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if lab.dims.len() != 1 {
        return Err(fmt_err(format!("labels must be 1-D, got {:?}", lab.dims)));
    }
    let mut shape = img.dims.clone();
    if shape.len() == 3 {
        shape.insert(1, 1);
    }
    let scale = if img.kind == IdxType::U8 {
        1.0 / 255.0
    } else {
        1.0
    };
    let inputs = Tensor::new(shape, img.values.iter().map(|v| v * scale).collect())?;
    let mut label_idx = Vec::with_capacity(lab.values.len());
    for &v in &lab.values {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(fmt_err(format!("label {v} is not a class index")));
        }
        label_idx.push(v as usize);
    }
    let classes = label_idx.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(inputs, label_idx, classes)
}
