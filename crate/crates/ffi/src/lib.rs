//! C ABI over `dsq-core`.
//!
//! Every fallible function returns a [`DsqStatus`]. On failure a description
//! is stored per thread and can be read with [`dsq_last_error`]. Handles are
//! opaque; each `*_new`/`*_load` has a matching `*_free` that accepts null.
//! Panics never cross the boundary: they are reported as
//! [`DsqStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dsq_core::archive::ModelArchive;
use dsq_core::gemm::{self, GemmOptions, PackedMatrix};
use dsq_core::nn::{Network, QuantPass};
use dsq_core::quant::{self, QuantParams};
use dsq_core::{Error, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnsupportedBits = 3,
    InvalidRange = 4,
    AlphaOutOfRange = 5,
    ShapeMismatch = 6,
    NonFinite = 7,
    Format = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
    Other = 12,
}

impl From<&Error> for DsqStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::NonFinite { .. } => Self::NonFinite,
            Error::UnsupportedBits(..) => Self::UnsupportedBits,
            Error::InvalidRange { .. } => Self::InvalidRange,
            Error::AlphaOutOfRange { .. } => Self::AlphaOutOfRange,
            Error::ShapeMismatch { .. } | Error::InvalidShape(_) => Self::ShapeMismatch,
            Error::Format { .. } | Error::Config { .. } => Self::Format,
            Error::Io(_) => Self::Io,
            Error::InvalidArgument(_)
            | Error::Empty(_)
            | Error::InvalidNetwork(_)
            | Error::IntervalMismatch { .. } => Self::InvalidArgument,
            _ => Self::Other,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DsqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DsqStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DsqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsqStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DsqStatus::Panic
        }
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dsq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(
    p: *mut T,
    len: usize,
    needed: usize,
    what: &str,
) -> Result<&'a mut [T], Failure> {
    if len < needed {
        return Err(Failure(
            DsqStatus::BufferTooSmall,
            format!("{what}: need {needed} elements, got {len}"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

/// Quantizer parameters (bit width, clipping range, alpha).
pub struct DsqQuantizer(QuantParams);

/// Matrix of signed low-bit codes.
pub struct DsqPacked(PackedMatrix);

/// Network loaded from a model archive.
pub struct DsqModel(Network);

/// Gradients of the soft quantizer output.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DsqGradients {
    pub d_x: f64,
    pub d_alpha: f64,
    pub d_lower: f64,
    pub d_upper: f64,
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dsq_quantizer_new(
    bits: u8,
    lower: f64,
    upper: f64,
    alpha: f64,
    out: *mut *mut DsqQuantizer,
) -> DsqStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = Box::into_raw(Box::new(DsqQuantizer(QuantParams::new(
            bits, lower, upper, alpha,
        )?)));
        Ok(())
    })
}

/// # Safety
/// `q` must be null or a handle from [`dsq_quantizer_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsq_quantizer_free(q: *mut DsqQuantizer) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// # Safety
/// `q` must be a live quantizer handle and `k` writable.
#[no_mangle]
pub unsafe extern "C" fn dsq_quantizer_sharpness(q: *const DsqQuantizer, k: *mut f64) -> DsqStatus {
    guard(|| {
        *out_ref(k, "k")? = in_ref(q, "quantizer")?.0.sharpness();
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsqMode {
    /// Soft quantizer.
    Soft = 0,
    /// Soft quantizer followed by the sign step.
    Hard = 1,
    /// Round to nearest level.
    Uniform = 2,
}

/// Quantizes `len` values from `input` into `output` (which may alias).
///
/// # Safety
/// `q` must be a live handle; `input` and `output` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dsq_quantize(
    q: *const DsqQuantizer,
    mode: DsqMode,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> DsqStatus {
    guard(|| {
        let qp = in_ref(q, "quantizer")?.0;
        if len > 0 && (input.is_null() || output.is_null()) {
            return Err(null("input or output"));
        }
        for i in 0..len {
            let x = *input.add(i);
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    context: "quantizer input",
                    value: x,
                }
                .into());
            }
            *output.add(i) = match mode {
                DsqMode::Soft => quant::dsq_quantize(x, &qp),
                DsqMode::Hard => quant::dsq_hard_quantize(x, &qp),
                DsqMode::Uniform => quant::uniform_quantize(x, &qp),
            };
        }
        Ok(())
    })
}

/// # Safety
/// `q` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dsq_backward(
    q: *const DsqQuantizer,
    x: f64,
    upstream: f64,
    out: *mut DsqGradients,
) -> DsqStatus {
    guard(|| {
        let qp = in_ref(q, "quantizer")?.0;
        for (v, what) in [(x, "x"), (upstream, "upstream")] {
            if !v.is_finite() {
                return Err(Failure(
                    DsqStatus::NonFinite,
                    format!("{what} = {v} is not finite"),
                ));
            }
        }
        let g = quant::dsq_backward(x, &qp, upstream);
        *out_ref(out, "out")? = DsqGradients {
            d_x: g.d_x,
            d_alpha: g.d_alpha,
            d_lower: g.d_l,
            d_upper: g.d_u,
        };
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsq_mac_budget(bits: u8, out: *mut usize) -> DsqStatus {
    guard(|| {
        *out_ref(out, "out")? = gemm::mac_budget(bits)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsq_widen_count(k: usize, bits: u8, out: *mut usize) -> DsqStatus {
    guard(|| {
        *out_ref(out, "out")? = gemm::widen_count(k, bits)?;
        Ok(())
    })
}

/// Quantizes a row-major `rows x cols` matrix to signed codes.
///
/// # Safety
/// `values` must hold `rows * cols` doubles, `q` must be live and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dsq_pack(
    values: *const f64,
    rows: usize,
    cols: usize,
    q: *const DsqQuantizer,
    out: *mut *mut DsqPacked,
) -> DsqStatus {
    guard(|| {
        let qp = in_ref(q, "quantizer")?.0;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(DsqStatus::ShapeMismatch, "shape overflows".into()))?;
        let data = in_slice(values, n, "values")?.to_vec();
        let t = Tensor::new(vec![rows, cols], data)?;
        let out = out_ref(out, "out")?;
        *out = Box::into_raw(Box::new(DsqPacked(gemm::quantize_to_codes(&t, &qp)?)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a live handle from [`dsq_pack`].
#[no_mangle]
pub unsafe extern "C" fn dsq_packed_free(p: *mut DsqPacked) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be live; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn dsq_packed_shape(
    p: *const DsqPacked,
    rows: *mut usize,
    cols: *mut usize,
) -> DsqStatus {
    guard(|| {
        let p = &in_ref(p, "packed")?.0;
        *out_ref(rows, "rows")? = p.rows();
        *out_ref(cols, "cols")? = p.cols();
        Ok(())
    })
}

/// Copies the codes (row-major) into `codes`.
///
/// # Safety
/// `p` must be live; `codes` must have room for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dsq_packed_codes(
    p: *const DsqPacked,
    codes: *mut i8,
    len: usize,
) -> DsqStatus {
    guard(|| {
        let p = &in_ref(p, "packed")?.0;
        out_slice(codes, len, p.codes().len(), "codes")?.copy_from_slice(p.codes());
        Ok(())
    })
}

/// Integer product `a * b` into a row-major `i32` buffer of
/// `a.rows * b.cols` elements. `threads` of 0 uses all cores.
///
/// # Safety
/// Handles must be live; `out` must have room for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn dsq_gemm(
    a: *const DsqPacked,
    b: *const DsqPacked,
    threads: usize,
    out: *mut i32,
    len: usize,
) -> DsqStatus {
    guard(|| {
        let (a, b) = (&in_ref(a, "a")?.0, &in_ref(b, "b")?.0);
        let opts = GemmOptions {
            threads,
            ..GemmOptions::default()
        };
        let (c, _) = gemm::gemm_lowbit_with(a, b, &opts)?;
        out_slice(out, len, c.data.len(), "out")?.copy_from_slice(&c.data);
        Ok(())
    })
}

/// Real-valued product recovered from the integer result of [`dsq_gemm`].
///
/// # Safety
/// Handles must be live; `c` and `out` must hold `a.rows * b.cols`
/// elements.
#[no_mangle]
pub unsafe extern "C" fn dsq_gemm_dequantize(
    a: *const DsqPacked,
    b: *const DsqPacked,
    c: *const i32,
    out: *mut f64,
    len: usize,
) -> DsqStatus {
    guard(|| {
        let (a, b) = (&in_ref(a, "a")?.0, &in_ref(b, "b")?.0);
        let n = a.rows() * b.cols();
        let c = gemm::IntMatrix {
            rows: a.rows(),
            cols: b.cols(),
            data: in_slice(c, n, "c")?.to_vec(),
        };
        let o = gemm::gemm_dequantize(&c, a, b)?;
        out_slice(out, len, n, "out")?.copy_from_slice(o.data());
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dsq_model_load(path: *const c_char, out: *mut *mut DsqModel) -> DsqStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(DsqStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let net = ModelArchive::load(Path::new(path))?.to_network()?;
        *out_ref(out, "out")? = Box::into_raw(Box::new(DsqModel(net)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a live handle from [`dsq_model_load`].
#[no_mangle]
pub unsafe extern "C" fn dsq_model_free(m: *mut DsqModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of output classes of the model.
///
/// # Safety
/// `m` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dsq_model_outputs(m: *const DsqModel, out: *mut usize) -> DsqStatus {
    guard(|| {
        let net = &in_ref(m, "model")?.0;
        let last = net
            .layers()
            .last()
            .ok_or_else(|| Failure(DsqStatus::Other, "empty model".into()))?;
        *out_ref(out, "out")? = last.output_channels();
        Ok(())
    })
}

/// Forward pass with the hard quantizer on `rows` samples of `cols`
/// features; writes `rows * outputs` logits.
///
/// # Safety
/// `m` must be live; `input` must hold `rows * cols` values and `output`
/// have room for `len`.
#[no_mangle]
pub unsafe extern "C" fn dsq_model_forward(
    m: *const DsqModel,
    input: *const f64,
    rows: usize,
    cols: usize,
    output: *mut f64,
    len: usize,
) -> DsqStatus {
    guard(|| {
        let net = &in_ref(m, "model")?.0;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(DsqStatus::ShapeMismatch, "shape overflows".into()))?;
        let x = Tensor::new(vec![rows, cols], in_slice(input, n, "input")?.to_vec())?;
        let y = net.forward(&x, &QuantPass::hard())?;
        out_slice(output, len, y.len(), "output")?.copy_from_slice(y.data());
        Ok(())
    })
}
