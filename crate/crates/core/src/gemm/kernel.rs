use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{IntMatrix, MacSchedule, PackedMatrix};

/// Inner-loop implementation. Both produce bit-identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// One output element at a time; B is read column-major.
    #[default]
    Scalar,
    /// Sixteen output columns per pass in fixed-width lane arrays, laid out
    /// so the compiler can map them onto SIMD registers.
    Lanes,
}

pub const LANES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GemmOptions {
    pub backend: Backend,
    /// Worker threads. `0` uses the current rayon pool, `1` runs inline.
    pub threads: usize,
    /// Output tile edge; rows are distributed to threads in bands of this
    /// height.
    pub tile: usize,
    /// Count every MAC, widen and spill and check each accumulate for
    /// overflow. Always runs the scalar chain.
    pub instrument: bool,
}

impl Default for GemmOptions {
    fn default() -> Self {
        Self {
            backend: Backend::Scalar,
            threads: 1,
            tile: 8,
            instrument: false,
        }
    }
}

/// Counters gathered by the instrumented kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GemmStats {
    pub macs: u64,
    pub widens: u64,
    pub spills: u64,
    /// Accumulates that left the 8-bit range.
    pub overflow8: u64,
    /// Accumulates that left the 16-bit range.
    pub overflow16: u64,
    /// Largest magnitude seen in an 8-bit partial.
    pub peak8: u32,
    /// Largest magnitude seen in a 16-bit partial.
    pub peak16: u32,
}

impl GemmStats {
    fn merge(mut self, o: Self) -> Self {
        self.macs += o.macs;
        self.widens += o.widens;
        self.spills += o.spills;
        self.overflow8 += o.overflow8;
        self.overflow16 += o.overflow16;
        self.peak8 = self.peak8.max(o.peak8);
        self.peak16 = self.peak16.max(o.peak16);
        self
    }
}

fn chain(a: &[i8], b: &[i8], s: &MacSchedule) -> i32 {
    let mut acc32 = 0i32;
    let mut acc16 = 0i16;
    let mut widens = 0;
    for (ca, cb) in a.chunks(s.budget).zip(b.chunks(s.budget)) {
        let mut acc8 = 0i8;
        for (&x, &y) in ca.iter().zip(cb) {
            acc8 = acc8.wrapping_add(x.wrapping_mul(y));
        }
        acc16 = acc16.wrapping_add(acc8 as i16);
        widens += 1;
        if widens == s.spill_after {
            acc32 += acc16 as i32;
            acc16 = 0;
            widens = 0;
        }
    }
    acc32 + acc16 as i32
}

fn chain_instrumented(a: &[i8], b: &[i8], s: &MacSchedule, st: &mut GemmStats) -> i32 {
    let mut acc32 = 0i32;
    let mut acc16 = 0i16;
    let mut widens = 0;
    for (ca, cb) in a.chunks(s.budget).zip(b.chunks(s.budget)) {
        let mut acc8 = 0i8;
        for (&x, &y) in ca.iter().zip(cb) {
            st.macs += 1;
            acc8 = match x.checked_mul(y).and_then(|p| acc8.checked_add(p)) {
                Some(v) => v,
                None => {
                    st.overflow8 += 1;
                    acc8.wrapping_add(x.wrapping_mul(y))
                }
            };
            st.peak8 = st.peak8.max(acc8.unsigned_abs() as u32);
        }
        st.widens += 1;
        acc16 = match acc16.checked_add(acc8 as i16) {
            Some(v) => v,
            None => {
                st.overflow16 += 1;
                acc16.wrapping_add(acc8 as i16)
            }
        };
        st.peak16 = st.peak16.max(acc16.unsigned_abs() as u32);
        widens += 1;
        if widens == s.spill_after {
            st.spills += 1;
            acc32 += acc16 as i32;
            acc16 = 0;
            widens = 0;
        }
    }
    if widens > 0 {
        st.spills += 1;
    }
    acc32 + acc16 as i32
}

fn lanes_block(
    a_row: &[i8],
    b: &[i8],
    n: usize,
    j0: usize,
    width: usize,
    s: &MacSchedule,
    out: &mut [i32],
) {
    let k = a_row.len();
    let mut acc32 = [0i32; LANES];
    let mut acc16 = [0i16; LANES];
    let mut widens = 0;
    let mut start = 0;
    while start < k {
        let end = (start + s.budget).min(k);
        let mut acc8 = [0i8; LANES];
        for (p, &x) in a_row.iter().enumerate().take(end).skip(start) {
            let brow = &b[p * n + j0..p * n + j0 + width];
            for (acc, &y) in acc8.iter_mut().zip(brow) {
                *acc = acc.wrapping_add(x.wrapping_mul(y));
            }
        }
        for (w, &v) in acc16.iter_mut().zip(&acc8) {
            *w = w.wrapping_add(v as i16);
        }
        widens += 1;
        if widens == s.spill_after {
            for (d, w) in acc32.iter_mut().zip(acc16.iter_mut()) {
                *d += *w as i32;
                *w = 0;
            }
            widens = 0;
        }
        start = end;
    }
    for l in 0..width {
        out[j0 + l] = acc32[l] + acc16[l] as i32;
    }
}

/// Computes the output rows `row0..row0 + band.len() / n`.
fn band(
    a: &PackedMatrix,
    b: &PackedMatrix,
    bt: Option<&PackedMatrix>,
    s: &MacSchedule,
    opts: &GemmOptions,
    row0: usize,
    out: &mut [i32],
) -> GemmStats {
    let (k, n) = (a.cols(), b.cols());
    let rows = out.len() / n;
    let a_row = |i: usize| &a.codes()[(row0 + i) * k..(row0 + i + 1) * k];
    let mut stats = GemmStats::default();
    match (opts.instrument, opts.backend, bt) {
        (false, Backend::Lanes, _) => {
            for i in 0..rows {
                let row_out = &mut out[i * n..(i + 1) * n];
                for j0 in (0..n).step_by(LANES) {
                    lanes_block(a_row(i), b.codes(), n, j0, LANES.min(n - j0), s, row_out);
                }
            }
        }
        (instrument, _, Some(bt)) => {
            let tile = opts.tile.max(1);
            for jt in (0..n).step_by(tile) {
                for i in 0..rows {
                    for j in jt..(jt + tile).min(n) {
                        let col = &bt.codes()[j * k..(j + 1) * k];
                        out[i * n + j] = if instrument {
                            chain_instrumented(a_row(i), col, s, &mut stats)
                        } else {
                            chain(a_row(i), col, s)
                        };
                    }
                }
            }
        }
        (_, _, None) => unreachable!("column-major copy of B is built for the scalar chain"),
    }
    stats
}

pub(super) fn run(
    a: &PackedMatrix,
    b: &PackedMatrix,
    s: &MacSchedule,
    opts: &GemmOptions,
) -> Result<(IntMatrix, Option<GemmStats>)> {
    let (m, n) = (a.rows(), b.cols());
    let bt = (opts.instrument || opts.backend == Backend::Scalar).then(|| b.transposed());
    let mut data = vec![0i32; m * n];
    let tile = opts.tile.max(1);
    let work = |data: &mut [i32]| -> GemmStats {
        if opts.threads == 1 {
            data.chunks_mut(tile * n)
                .enumerate()
                .map(|(t, chunk)| band(a, b, bt.as_ref(), s, opts, t * tile, chunk))
                .fold(GemmStats::default(), GemmStats::merge)
        } else {
            data.par_chunks_mut(tile * n)
                .enumerate()
                .map(|(t, chunk)| band(a, b, bt.as_ref(), s, opts, t * tile, chunk))
                .collect::<Vec<_>>()
                .into_iter()
                .fold(GemmStats::default(), GemmStats::merge)
        }
    };
    let stats = if opts.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| work(&mut data))
    } else {
        work(&mut data)
    };
    Ok((
        IntMatrix {
            rows: m,
            cols: n,
            data,
        },
        opts.instrument.then_some(stats),
    ))
}
