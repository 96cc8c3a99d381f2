use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quant::QuantParams;

use super::{gemm_lowbit_with, widen_count, GemmOptions, PackedMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub bits: u8,
    pub threads: usize,
    pub median_ns: u128,
    /// 8-to-16-bit widens per output element.
    pub widens: usize,
    pub macs_per_widen: f64,
    /// Multiply-accumulates per nanosecond.
    pub macs_per_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// True when, for every size, fewer bits means strictly fewer widens
    /// per MAC.
    pub fn widen_ratio_monotone(&self) -> bool {
        self.rows.iter().all(|r| {
            self.rows
                .iter()
                .filter(|o| (o.m, o.n, o.k) == (r.m, r.n, r.k) && o.bits > r.bits)
                .all(|o| r.widens as f64 / (r.k as f64) < o.widens as f64 / (o.k as f64))
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "M\tN\tK\tbits\tthreads\tmedian_ns\tmacs_per_widen\twidens\tmacs_per_ns\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\t{}\t{:.4}",
                r.m,
                r.n,
                r.k,
                r.bits,
                r.threads,
                r.median_ns,
                r.macs_per_widen,
                r.widens,
                r.macs_per_ns
            );
        }
        let verdict = if self.widen_ratio_monotone() {
            "yes"
        } else {
            "NO"
        };
        let _ = writeln!(out, "# widens per MAC increase with bit width: {verdict}");
        out
    }
}

fn random_codes(rows: usize, cols: usize, bits: u8, rng: &mut ChaCha8Rng) -> Result<PackedMatrix> {
    let h = 1i8 << (bits - 1);
    let codes = (0..rows * cols).map(|_| rng.random_range(-h..h)).collect();
    PackedMatrix::from_codes(rows, cols, codes, QuantParams::new(bits, -1.0, 1.0, 0.2)?)
}

/// Times `gemm_lowbit` on random codes for every `(M, N, K)` and bit width,
/// reporting the median of `reps` runs and the exact widen schedule.
pub fn bench_gemm(
    sizes: &[(usize, usize, usize)],
    bits: &[u8],
    opts: &GemmOptions,
    reps: usize,
    seed: u64,
) -> Result<BenchReport> {
    if sizes.is_empty() || bits.is_empty() || reps == 0 {
        return Err(Error::InvalidArgument(
            "benchmark needs sizes, bit widths and at least one repetition".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BenchReport::default();
    for &(m, n, k) in sizes {
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::InvalidShape(vec![m, n, k]));
        }
        for &b in bits {
            let widens = widen_count(k, b)?;
            let a = random_codes(m, k, b, &mut rng)?;
            let bm = random_codes(k, n, b, &mut rng)?;
            let mut times = Vec::with_capacity(reps);
            for _ in 0..reps {
                let start = Instant::now();
                let out = gemm_lowbit_with(&a, &bm, opts)?;
                times.push(start.elapsed().as_nanos());
                std::hint::black_box(out);
            }
            times.sort_unstable();
            let median_ns = times[times.len() / 2];
            report.rows.push(BenchRow {
                m,
                n,
                k,
                bits: b,
                threads: opts.threads,
                median_ns,
                widens,
                macs_per_widen: k as f64 / widens as f64,
                macs_per_ns: (m * n * k) as f64 / median_ns.max(1) as f64,
            });
        }
    }
    Ok(report)
}
