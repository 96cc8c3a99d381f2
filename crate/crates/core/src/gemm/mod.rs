//! Low-bit signed integer GEMM with a narrow-accumulator schedule.
//!
//! Codes are signed `b`-bit integers in `[-h, h - 1]` with `h = 2^(b-1)`, so
//! a single product has magnitude at most `h^2`. Products are accumulated in
//! an 8-bit register for at most `mac_budget(b) = floor(127 / h^2)` steps,
//! which keeps the partial inside `[-128, 127]`. Each 8-bit partial is then
//! widened into a 16-bit accumulator. A widened partial has magnitude at most
//! `mac_budget(b) * h^2`, so the 16-bit accumulator is spilled into the 32-bit
//! result after `floor(32767 / (mac_budget(b) * h^2))` widens:
//!
//! | b | h^2 | budget | max partial | widens per spill |
//! |---|-----|--------|-------------|------------------|
//! | 2 | 4   | 31     | 124         | 264              |
//! | 3 | 16  | 7      | 112         | 292              |
//! | 4 | 64  | 1      | 64          | 511              |
//!
//! Codes are signed for both operands. For activations that are never
//! negative (after ReLU) this leaves the lower half of the code range unused
//! unless the clipping range straddles zero; the affine correction in
//! [`gemm_dequantize`] handles any range.

mod bench;
mod kernel;

pub use bench::{bench_gemm, BenchReport, BenchRow};
pub use kernel::{Backend, GemmOptions, GemmStats};

use crate::error::{Error, Result};
use crate::quant::{uniform_level, QuantParams};
use crate::tensor::Tensor;

pub const MIN_GEMM_BITS: u8 = 2;
pub const MAX_GEMM_BITS: u8 = 4;

fn check_bits(bits: u8) -> Result<()> {
    if (MIN_GEMM_BITS..=MAX_GEMM_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::UnsupportedBits(
            bits as u32,
            "2..=4 for integer GEMM",
        ))
    }
}

/// MACs an 8-bit accumulator can absorb before it must be widened.
pub fn mac_budget(bits: u8) -> Result<usize> {
    check_bits(bits)?;
    Ok(127 >> (2 * (bits as usize - 1)))
}

/// 8-to-16-bit widening events per output element for inner dimension `k`.
pub fn widen_count(k: usize, bits: u8) -> Result<usize> {
    Ok(k.div_ceil(mac_budget(bits)?))
}

/// Accumulation schedule for one bit width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacSchedule {
    pub bits: u8,
    /// MACs per 8-bit partial.
    pub budget: usize,
    /// Widens per 16-bit partial.
    pub spill_after: usize,
}

impl MacSchedule {
    pub fn new(bits: u8) -> Result<Self> {
        let budget = mac_budget(bits)?;
        let half = 1usize << (bits - 1);
        let spill_after = 32767 / (budget * half * half);
        Ok(Self {
            bits,
            budget,
            spill_after,
        })
    }

    pub fn widens(&self, k: usize) -> usize {
        k.div_ceil(self.budget)
    }

    /// 16-to-32-bit transfers per output element, counting the final flush.
    pub fn spills(&self, k: usize) -> usize {
        self.widens(k).div_ceil(self.spill_after)
    }
}

/// Row-major matrix of signed low-bit codes plus the quantizer that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedMatrix {
    rows: usize,
    cols: usize,
    codes: Vec<i8>,
    row_sums: Vec<i32>,
    col_sums: Vec<i32>,
    qp: QuantParams,
}

impl PackedMatrix {
    pub fn from_codes(rows: usize, cols: usize, codes: Vec<i8>, qp: QuantParams) -> Result<Self> {
        check_bits(qp.bits())?;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape(vec![rows, cols]));
        }
        if codes.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: vec![rows * cols],
                actual: vec![codes.len()],
            });
        }
        let half = 1i8 << (qp.bits() - 1);
        if let Some(&c) = codes.iter().find(|&&c| c < -half || c >= half) {
            return Err(Error::InvalidArgument(format!(
                "code {c} outside the signed {}-bit range",
                qp.bits()
            )));
        }
        let mut row_sums = vec![0i32; rows];
        let mut col_sums = vec![0i32; cols];
        for (i, row) in codes.chunks(cols).enumerate() {
            for (j, &c) in row.iter().enumerate() {
                row_sums[i] += c as i32;
                col_sums[j] += c as i32;
            }
        }
        Ok(Self {
            rows,
            cols,
            codes,
            row_sums,
            col_sums,
            qp,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u8 {
        self.qp.bits()
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn code(&self, i: usize, j: usize) -> i8 {
        self.codes[i * self.cols + j]
    }

    pub fn row_sums(&self) -> &[i32] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[i32] {
        &self.col_sums
    }

    pub fn params(&self) -> &QuantParams {
        &self.qp
    }

    /// `l + delta * 2^(b-1)`: the real value of code zero.
    pub fn zero_point(&self) -> f64 {
        self.qp.lower() + self.qp.delta() * (1u32 << (self.bits() - 1)) as f64
    }

    /// Real value of each code, using the same levels as the uniform
    /// quantizer.
    pub fn dequantize(&self) -> Tensor {
        let half = 1i32 << (self.bits() - 1);
        let data = self
            .codes
            .iter()
            .map(|&c| self.qp.level((c as i32 + half) as usize))
            .collect();
        Tensor::from_parts_unchecked(vec![self.rows, self.cols], data)
    }

    pub fn transposed(&self) -> Self {
        let mut codes = vec![0i8; self.codes.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                codes[j * self.rows + i] = self.codes[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            codes,
            row_sums: self.col_sums.clone(),
            col_sums: self.row_sums.clone(),
            qp: self.qp,
        }
    }
}

/// Quantizes a matrix (or a vector, as one row) to signed codes
/// `round((clamp(x) - l) / delta) - 2^(b-1)`.
pub fn quantize_to_codes(t: &Tensor, qp: &QuantParams) -> Result<PackedMatrix> {
    check_bits(qp.bits())?;
    let (rows, cols) = match *t.shape() {
        [n] => (1, n),
        [r, c] => (r, c),
        _ => return Err(Error::InvalidShape(t.shape().to_vec())),
    };
    let half = 1i32 << (qp.bits() - 1);
    let codes = t
        .data()
        .iter()
        .map(|&x| (uniform_level(x, qp) as i32 - half) as i8)
        .collect();
    PackedMatrix::from_codes(rows, cols, codes, *qp)
}

/// 32-bit integer result matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i32>,
}

impl IntMatrix {
    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.data[i * self.cols + j]
    }
}

fn check_operands(a: &PackedMatrix, b: &PackedMatrix) -> Result<()> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            expected: vec![a.rows, a.cols],
            actual: vec![b.rows, b.cols],
        });
    }
    if a.bits() != b.bits() {
        return Err(Error::InvalidArgument(format!(
            "operand bit widths differ: {} vs {}",
            a.bits(),
            b.bits()
        )));
    }
    Ok(())
}

/// `C = A * B` over the integer codes, using the portable scalar kernel.
pub fn gemm_lowbit(a: &PackedMatrix, b: &PackedMatrix) -> Result<IntMatrix> {
    Ok(gemm_lowbit_with(a, b, &GemmOptions::default())?.0)
}

/// `C = A * B` with an explicit backend, thread count and optional
/// instrumentation. Stats are returned only when instrumentation is on.
pub fn gemm_lowbit_with(
    a: &PackedMatrix,
    b: &PackedMatrix,
    opts: &GemmOptions,
) -> Result<(IntMatrix, Option<GemmStats>)> {
    check_operands(a, b)?;
    kernel::run(a, b, &MacSchedule::new(a.bits())?, opts)
}

/// Straightforward 32-bit accumulation, used as the exactness reference.
pub fn gemm_reference(a: &PackedMatrix, b: &PackedMatrix) -> Result<IntMatrix> {
    check_operands(a, b)?;
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut data = vec![0i32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0i32;
            for p in 0..k {
                acc += a.code(i, p) as i32 * b.code(p, j) as i32;
            }
            data[i * n + j] = acc;
        }
    }
    Ok(IntMatrix {
        rows: m,
        cols: n,
        data,
    })
}

/// Real-valued product of the dequantized operands, recovered from the
/// integer result by the affine expansion
/// `K l_a l_b + l_a d_b colsum_b + l_b d_a rowsum_a + d_a d_b C`,
/// where `l` is each operand's zero point.
pub fn gemm_dequantize(c: &IntMatrix, a: &PackedMatrix, b: &PackedMatrix) -> Result<Tensor> {
    check_operands(a, b)?;
    if c.rows != a.rows || c.cols != b.cols || c.data.len() != c.rows * c.cols {
        return Err(Error::ShapeMismatch {
            expected: vec![a.rows, b.cols],
            actual: vec![c.rows, c.cols],
        });
    }
    let (la, lb) = (a.zero_point(), b.zero_point());
    let (da, db) = (a.qp.delta(), b.qp.delta());
    let k = a.cols as f64;
    let mut out = Vec::with_capacity(c.data.len());
    for i in 0..c.rows {
        for j in 0..c.cols {
            let v = k * la * lb
                + la * db * b.col_sums[j] as f64
                + lb * da * a.row_sums[i] as f64
                + da * db * c.get(i, j) as f64;
            out.push(v);
        }
    }
    Tensor::new(vec![c.rows, c.cols], out)
}
