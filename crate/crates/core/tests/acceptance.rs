//! Acceptance checks. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails. Tolerances are pinned as constants below.

use std::time::{Duration, Instant};

use dsq_core::archive::ModelArchive;
use dsq_core::gemm::{
    gemm_dequantize, gemm_lowbit_with, gemm_reference, quantize_to_codes, Backend, GemmOptions,
    PackedMatrix,
};
use dsq_core::nn::{
    evaluate, gaussian_blobs, train, Activation, ClipPolicy, Dataset, Method, Network, QuantPass,
    QuantSite, TrainConfig,
};
use dsq_core::quant::{
    alpha_floor, dsq_backward, dsq_hard_quantize, dsq_quantize, uniform_quantize, QuantParams,
    ALPHA_MAX, ALPHA_MIN, K_MAX,
};
use dsq_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRID_POINTS: usize = 100_000;
const HARD_CONFIGS: usize = 50;
const HARD_BUDGET: Duration = Duration::from_secs(5);

const GRAD_SAMPLES: usize = 1000;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_FLOOR: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;
/// Minimum distance from an interval edge, as a fraction of delta.
const GRAD_MARGIN: f64 = 1e-3;
const NET_REL_TOL: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(30);

const APPROACH_ALPHAS: [f64; 5] = [0.4, 0.2, 0.1, 0.05, 0.01];
const APPROACH_GRID: usize = 100_000;

const GEMM_INSTANCES: usize = 200;
const GEMM_MAX_DIM: usize = 256;
const GEMM_BUDGET: Duration = Duration::from_secs(60);

const DEPLOY_LAYERS: usize = 50;
const DEPLOY_REL_TOL: f64 = 1e-9;

const ABLATION_SEEDS: u64 = 8;
const ABLATION_BUDGET: Duration = Duration::from_secs(600);

const ARCHIVE_MODELS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_params(rng: &mut impl Rng, bits: u8) -> QuantParams {
    let lower = rng.random_range(-3.0..1.0);
    let upper = lower + rng.random_range(0.05..4.0);
    let alpha = rng.random_range(alpha_floor()..ALPHA_MAX);
    QuantParams::new(bits, lower, upper, alpha).unwrap()
}

fn hard_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0usize;
    let mut evaluated = 0usize;
    for bits in 1..=4u8 {
        for _ in 0..HARD_CONFIGS {
            let p = random_params(&mut rng, bits);
            let span = p.upper() - p.lower();
            let (lo, hi) = (p.lower() - 0.25 * span, p.upper() + 0.25 * span);
            for i in 0..GRID_POINTS {
                let x = lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64;
                if dsq_hard_quantize(x, &p).to_bits() != uniform_quantize(x, &p).to_bits() {
                    mismatches += 1;
                }
                evaluated += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < HARD_BUDGET,
        format!(
            "{mismatches} mismatches over {evaluated} points, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn rel_err(an: f64, fd: f64) -> f64 {
    (an - fd).abs() / fd.abs().max(GRAD_FLOOR)
}

fn central(f: impl Fn(f64) -> f64, at: f64, h: f64) -> f64 {
    (f(at + h) - f(at - h)) / (2.0 * h)
}

/// Draws an interior point at least `GRAD_MARGIN * delta` away from the
/// interval edges.
fn interior_sample(rng: &mut impl Rng) -> (f64, QuantParams) {
    let bits = rng.random_range(1..=4u8);
    let lower = rng.random_range(-2.0..1.0);
    let upper = lower + rng.random_range(0.1..3.0);
    let alpha = rng.random_range(2.0 * ALPHA_MIN..0.98 * ALPHA_MAX);
    let p = QuantParams::new(bits, lower, upper, alpha).unwrap();
    let i = rng.random_range(0..p.intervals());
    let frac = rng.random_range(GRAD_MARGIN..1.0 - GRAD_MARGIN);
    (p.lower() + (i as f64 + frac) * p.delta(), p)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let names = ["x", "alpha", "l", "u"];
    let mut worst = [0.0f64; 4];
    let mut failures = [0usize; 4];
    for _ in 0..GRAD_SAMPLES {
        let (x, p) = interior_sample(&mut rng);
        let (b, l, u, a) = (p.bits(), p.lower(), p.upper(), p.alpha());
        let g = dsq_backward(x, &p, 1.0);
        let q = |x: f64, l: f64, u: f64, a: f64| {
            dsq_quantize(x, &QuantParams::new(b, l, u, a).unwrap())
        };
        let h = GRAD_STEP;
        let fd = [
            central(|v| q(v, l, u, a), x, h),
            central(|v| q(x, l, u, v), a, h),
            central(|v| q(x, v, u, a), l, h),
            central(|v| q(x, l, v, a), u, h),
        ];
        let an = [g.d_x, g.d_alpha, g.d_l, g.d_u];
        for j in 0..4 {
            let e = rel_err(an[j], fd[j]);
            worst[j] = worst[j].max(e);
            if !(e < GRAD_REL_TOL) {
                failures[j] += 1;
            }
        }
    }
    let (net_worst, checked, skipped) = network_audit();
    let elapsed = start.elapsed();
    let mut detail = String::new();
    for j in 0..4 {
        detail.push_str(&format!(
            "{} max rel {:.1e} ({} fail); ",
            names[j], worst[j], failures[j]
        ));
    }
    detail.push_str(&format!(
        "network max rel {net_worst:.1e} over {checked} params ({skipped} non-smooth skipped); {:.2}s",
        elapsed.as_secs_f64()
    ));
    let pass = failures.iter().all(|&f| f == 0)
        && net_worst < NET_REL_TOL
        && skipped * 20 < checked + skipped
        && elapsed < GRAD_BUDGET;
    outcome(pass, detail)
}

/// Compares every network gradient against central differences of the
/// soft-forward objective. A parameter is skipped when two step sizes
/// disagree, which means a ReLU or clipping kink lies within the step.
fn network_audit() -> (f64, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut net = Network::mlp(3, &[6, 6, 6], 3, 2, &mut rng).unwrap();
    for (i, site) in net.quantizers() {
        let (lo, hi) = match site {
            QuantSite::Weights => {
                let (lo, hi) = net.layers()[i].weights.min_max();
                (0.8 * lo, 0.8 * hi)
            }
            QuantSite::Activations => (0.05, 1.5),
        };
        let qp = net.quant_params_mut(i, site);
        qp.set_range(lo, hi).unwrap();
        qp.set_alpha_clamped(rng.random_range(0.1..0.4));
    }
    let data = gaussian_blobs(16, 3, 3, 0.6, 21).unwrap();
    let (x, labels) = data.batch(&(0..data.len()).collect::<Vec<_>>());
    let pass = QuantPass {
        alpha_reg: 1e-4,
        ..QuantPass::soft()
    };
    let grads = net.loss_and_grads(&x, &labels, &pass).unwrap().grads;

    type Setter = Box<dyn Fn(&mut Network, f64)>;
    let mut params: Vec<(f64, f64, Setter)> = Vec::new();
    for (li, layer) in net.layers().iter().enumerate() {
        for wi in 0..layer.weights.len() {
            let v = layer.weights.data()[wi];
            params.push((
                v,
                grads[li].d_weights.data()[wi],
                Box::new(move |n, v| n.layers_mut()[li].weights.data_mut()[wi] = v),
            ));
        }
        for bi in 0..layer.bias.len() {
            params.push((
                layer.bias[bi],
                grads[li].d_bias[bi],
                Box::new(move |n, v| n.layers_mut()[li].bias[bi] = v),
            ));
        }
    }
    for (li, site) in net.quantizers() {
        let qp = *net.quant_params(li, site);
        let sg = match site {
            QuantSite::Weights => grads[li].weight,
            QuantSite::Activations => grads[li].act,
        };
        params.push((
            qp.alpha(),
            sg.alpha,
            Box::new(move |n, v| n.quant_params_mut(li, site).set_alpha_clamped(v)),
        ));
        params.push((
            qp.lower(),
            sg.lower,
            Box::new(move |n, v| {
                let u = n.quant_params(li, site).upper();
                n.quant_params_mut(li, site).set_range(v, u).unwrap()
            }),
        ));
        params.push((
            qp.upper(),
            sg.upper,
            Box::new(move |n, v| {
                let l = n.quant_params(li, site).lower();
                n.quant_params_mut(li, site).set_range(l, v).unwrap()
            }),
        ));
    }

    let fd = |set: &Setter, v: f64, h: f64| {
        let mut p = net.clone();
        set(&mut p, v + h);
        let up = p.loss(&x, &labels, &pass).unwrap();
        set(&mut p, v - h);
        let down = p.loss(&x, &labels, &pass).unwrap();
        (up - down) / (2.0 * h)
    };
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    for (v, an, set) in &params {
        let coarse = fd(set, *v, 1e-6);
        let fine = fd(set, *v, 1e-7);
        if rel_err(fine, coarse) > 1e-4 {
            skipped += 1;
            continue;
        }
        checked += 1;
        worst = worst.max(rel_err(*an, coarse));
    }
    (worst, checked, skipped)
}

fn clipped_branches() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0usize;
    let n = 10_000;
    for _ in 0..n {
        let bits = rng.random_range(1..=4u8);
        let p = random_params(&mut rng, bits);
        let up = rng.random_range(-10.0..10.0);
        let below = p.lower() - rng.random_range(1e-9..5.0);
        let above = p.upper() + rng.random_range(1e-9..5.0);
        let gb = dsq_backward(below, &p, up);
        let ga = dsq_backward(above, &p, up);
        if gb.d_l != up || gb.d_u != 0.0 || gb.d_x != 0.0 || gb.d_alpha != 0.0 {
            bad += 1;
        }
        if ga.d_u != up || ga.d_l != 0.0 || ga.d_x != 0.0 || ga.d_alpha != 0.0 {
            bad += 1;
        }
    }
    outcome(
        bad == 0,
        format!("{bad} inexact out of {} clipped evaluations", 2 * n),
    )
}

fn max_soft_gap(p: &QuantParams) -> f64 {
    (0..APPROACH_GRID)
        .map(|i| {
            let x = p.lower() + (p.upper() - p.lower()) * i as f64 / (APPROACH_GRID - 1) as f64;
            (dsq_quantize(x, p) - uniform_quantize(x, p)).abs()
        })
        .fold(0.0, f64::max)
}

fn asymptotic_approach() -> Outcome {
    let gaps: Vec<f64> = APPROACH_ALPHAS
        .iter()
        .map(|&a| max_soft_gap(&QuantParams::new(2, -1.0, 1.0, a).unwrap()))
        .collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    // A range narrow enough that the smallest admissible alpha hits the cap.
    let capped = QuantParams::new(2, 0.0, 0.006, alpha_floor()).unwrap();
    assert!(capped.k_clamped() && capped.sharpness() == K_MAX);
    let gap = max_soft_gap(&capped);
    let limit = capped.delta() / 100.0;
    outcome(
        monotone && gap < limit,
        format!(
            "gaps {:?} (monotone: {monotone}); at k={K_MAX} gap {:.3e} vs delta/100 {:.3e} ({:.1}% of delta)",
            gaps.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>(),
            gap,
            limit,
            100.0 * gap / capped.delta()
        ),
    )
}

fn random_codes(rng: &mut impl Rng, n: usize, bits: u8) -> Vec<i8> {
    let half = 1i32 << (bits - 1);
    (0..n)
        .map(|_| rng.random_range(-half..half) as i8)
        .collect()
}

fn packed(rows: usize, cols: usize, codes: Vec<i8>, bits: u8) -> PackedMatrix {
    PackedMatrix::from_codes(
        rows,
        cols,
        codes,
        QuantParams::new(bits, -1.0, 1.0, 0.2).unwrap(),
    )
    .unwrap()
}

fn gemm_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let instrumented = GemmOptions {
        instrument: true,
        ..GemmOptions::default()
    };
    let lanes = GemmOptions {
        backend: Backend::Lanes,
        threads: 0,
        ..GemmOptions::default()
    };
    let (mut mismatches, mut overflows, mut instances) = (0usize, 0u64, 0usize);
    let mut check = |a: &PackedMatrix, b: &PackedMatrix| {
        let want = gemm_reference(a, b).unwrap();
        let (got, stats) = gemm_lowbit_with(a, b, &instrumented).unwrap();
        let stats = stats.unwrap();
        let (fast, _) = gemm_lowbit_with(a, b, &lanes).unwrap();
        mismatches += usize::from(got != want) + usize::from(fast != want);
        overflows += stats.overflow8 + stats.overflow16;
        instances += 1;
    };
    for bits in 2..=4u8 {
        for i in 0..GEMM_INSTANCES {
            let dims = if i == 0 {
                (GEMM_MAX_DIM, GEMM_MAX_DIM, GEMM_MAX_DIM)
            } else {
                let mut d = || rng.random_range(1..=GEMM_MAX_DIM);
                (d(), d(), d())
            };
            let (m, n, k) = dims;
            let a = packed(m, k, random_codes(&mut rng, m * k, bits), bits);
            let b = packed(k, n, random_codes(&mut rng, k * n, bits), bits);
            check(&a, &b);
        }
        let (lo, hi) = (-(1i8 << (bits - 1)), (1i8 << (bits - 1)) - 1);
        for &(m, n, k) in &[
            (GEMM_MAX_DIM, GEMM_MAX_DIM, GEMM_MAX_DIM),
            (3, 5, 1000),
            (17, 33, 511),
        ] {
            for (x, y) in [(lo, lo), (hi, hi), (lo, hi), (hi, lo)] {
                check(
                    &packed(m, k, vec![x; m * k], bits),
                    &packed(k, n, vec![y; k * n], bits),
                );
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && overflows == 0 && elapsed < GEMM_BUDGET,
        format!(
            "{instances} instances, {mismatches} mismatches, {overflows} overflow events, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn schedule_counts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = GemmOptions {
        instrument: true,
        ..GemmOptions::default()
    };
    let mut ratios = Vec::new();
    let mut pass = true;
    for (bits, want) in [(2u8, 31u64), (3, 7), (4, 1)] {
        for k in [217usize, 434] {
            let a = packed(8, k, random_codes(&mut rng, 8 * k, bits), bits);
            let b = packed(k, 8, random_codes(&mut rng, k * 8, bits), bits);
            let stats = gemm_lowbit_with(&a, &b, &opts).unwrap().1.unwrap();
            let exact = stats.macs % stats.widens == 0 && stats.macs / stats.widens == want;
            pass &= exact;
            ratios.push(format!(
                "b={bits} K={k}: {}",
                stats.macs as f64 / stats.widens as f64
            ));
        }
    }
    outcome(pass, format!("macs per widen {}", ratios.join(", ")))
}

fn frobenius_rel(got: &[f64], want: &[f64]) -> f64 {
    let diff: f64 = got
        .iter()
        .zip(want)
        .map(|(g, w)| (g - w).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = want.iter().map(|w| w * w).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}

fn deployment_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..DEPLOY_LAYERS {
        let bits = rng.random_range(2..=4u8);
        let (m, k, n) = (
            rng.random_range(1..=64),
            rng.random_range(1..=300),
            rng.random_range(1..=64),
        );
        let act = Tensor::new(
            vec![m, k],
            (0..m * k).map(|_| rng.random_range(-0.5..3.0)).collect(),
        )
        .unwrap();
        let wt = Tensor::new(
            vec![k, n],
            (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let qa = random_params(&mut rng, bits);
        let qw = random_params(&mut rng, bits);
        let a = quantize_to_codes(&act, &qa).unwrap();
        let b = quantize_to_codes(&wt, &qw).unwrap();
        let c = gemm_lowbit_with(&a, &b, &GemmOptions::default()).unwrap().0;
        let got = gemm_dequantize(&c, &a, &b).unwrap();
        let (da, db) = (a.dequantize(), b.dequantize());
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                want[i * n + j] = (0..k)
                    .map(|t| da.data()[i * k + t] * db.data()[t * n + j])
                    .sum();
            }
        }
        worst = worst.max(frobenius_rel(got.data(), &want));
    }
    outcome(
        worst < DEPLOY_REL_TOL,
        format!("worst relative error {worst:.2e} over {DEPLOY_LAYERS} layers"),
    )
}

struct Variant {
    name: &'static str,
    clip_policy: ClipPolicy,
    learn_alpha: bool,
    method: Method,
}

const VARIANTS: [Variant; 4] = [
    Variant {
        name: "learnt(alpha,l,u)",
        clip_policy: ClipPolicy::Learned,
        learn_alpha: true,
        method: Method::Dsq,
    },
    Variant {
        name: "learnt(alpha)",
        clip_policy: ClipPolicy::MovingAverage,
        learn_alpha: true,
        method: Method::Dsq,
    },
    Variant {
        name: "fixed(alpha)",
        clip_policy: ClipPolicy::MovingAverage,
        learn_alpha: false,
        method: Method::Dsq,
    },
    Variant {
        name: "STE",
        clip_policy: ClipPolicy::MovingAverage,
        learn_alpha: false,
        method: Method::Ste,
    },
];

fn ablation_benchmark() -> (Dataset, Dataset) {
    gaussian_blobs(2048, 16, 4, 0.25, 1)
        .unwrap()
        .split(1024)
        .unwrap()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn training_trend() -> Outcome {
    let start = Instant::now();
    let (train_set, test_set) = ablation_benchmark();
    let stats: Vec<(f64, f64)> = VARIANTS
        .iter()
        .map(|v| {
            let accs: Vec<f64> = (0..ABLATION_SEEDS)
                .map(|seed| {
                    let mut net =
                        Network::mlp(4, &[16, 16], 16, 2, &mut ChaCha8Rng::seed_from_u64(seed))
                            .unwrap();
                    let cfg = TrainConfig {
                        learning_rate: 0.05,
                        epochs: 40,
                        batch_size: 32,
                        seed,
                        clip_policy: v.clip_policy,
                        learn_alpha: v.learn_alpha,
                        method: v.method,
                        ..TrainConfig::default()
                    };
                    train(&mut net, &train_set, &cfg).unwrap();
                    evaluate(&net, &test_set, &cfg.eval_pass()).unwrap().1
                })
                .collect();
            mean_and_se(&accs)
        })
        .collect();
    let ordered = stats.windows(2).all(|w| {
        let ((ma, sa), (mb, sb)) = (w[0], w[1]);
        ma >= mb - (sa * sa + sb * sb).sqrt()
    });
    let dsq_beats_ste = stats[0].0 > stats[3].0;
    let elapsed = start.elapsed();
    let summary: Vec<String> = VARIANTS
        .iter()
        .zip(&stats)
        .map(|(v, (m, s))| format!("{} {m:.4}+-{s:.4}", v.name))
        .collect();
    outcome(
        ordered && dsq_beats_ste && elapsed < ABLATION_BUDGET,
        format!(
            "{} over {ABLATION_SEEDS} seeds; {:.1}s",
            summary.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let (data, _) = ablation_benchmark();
    let run = || {
        let mut net = Network::mlp(4, &[16, 16], 16, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let trace = train(&mut net, &data, &cfg).unwrap();
        let float = ModelArchive::from_network(&net, false).to_bytes().unwrap();
        let coded = ModelArchive::from_network(&net, true).to_bytes().unwrap();
        (trace.to_text(), float, coded)
    };
    let (t1, f1, c1) = run();
    let (t2, f2, c2) = run();
    let same_training = t1 == t2 && f1 == f2 && c1 == c2;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut same_gemm = true;
    for bits in 2..=4u8 {
        let a = packed(97, 300, random_codes(&mut rng, 97 * 300, bits), bits);
        let b = packed(300, 65, random_codes(&mut rng, 300 * 65, bits), bits);
        let mut outputs = Vec::new();
        for backend in [Backend::Scalar, Backend::Lanes] {
            for threads in [1, 4, 1, 4] {
                let opts = GemmOptions {
                    backend,
                    threads,
                    ..GemmOptions::default()
                };
                outputs.push(gemm_lowbit_with(&a, &b, &opts).unwrap().0);
            }
        }
        same_gemm &= outputs.windows(2).all(|w| w[0] == w[1]);
    }
    outcome(
        same_training && same_gemm,
        format!("trace and archives identical: {same_training}; GEMM identical at 1 and 4 threads: {same_gemm}"),
    )
}

fn random_network(rng: &mut ChaCha8Rng) -> Network {
    let bits = rng.random_range(1..=8u8);
    let mut net = if rng.random_bool(0.5) {
        let hidden: Vec<usize> = (0..rng.random_range(2..=4))
            .map(|_| rng.random_range(1..=12))
            .collect();
        Network::mlp(
            rng.random_range(1..=6),
            &hidden,
            rng.random_range(2..=5),
            bits,
            rng,
        )
        .unwrap()
    } else {
        let (c, h, w) = (
            rng.random_range(1..=2),
            rng.random_range(2..=5),
            rng.random_range(2..=5),
        );
        Network::small_cnn(
            c,
            h,
            w,
            rng.random_range(1..=3),
            rng.random_range(2..=4),
            bits,
            rng,
        )
        .unwrap()
    };
    for layer in net.layers_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
        if rng.random_bool(0.2) {
            layer.activation = Activation::Identity;
        }
    }
    for (i, site) in net.quantizers() {
        let lo = rng.random_range(-2.0..0.5);
        let qp = net.quant_params_mut(i, site);
        qp.set_range(lo, lo + rng.random_range(0.01..3.0)).unwrap();
        qp.set_alpha_clamped(rng.random_range(alpha_floor()..ALPHA_MAX));
    }
    net
}

fn archive_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut diffs = 0usize;
    for _ in 0..ARCHIVE_MODELS {
        let net = random_network(&mut rng);
        for codes in [false, true] {
            let archive = ModelArchive::from_network(&net, codes);
            let back = ModelArchive::from_bytes(&archive.to_bytes().unwrap()).unwrap();
            for (x, y) in archive.records.iter().zip(&back.records) {
                diffs += usize::from(x != y);
            }
            diffs += archive.records.len().abs_diff(back.records.len());
            if !codes {
                diffs += usize::from(back.to_network().unwrap() != net);
            }
        }
    }
    outcome(
        diffs == 0,
        format!("{diffs} field diffs over {ARCHIVE_MODELS} models (float and coded archives)"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("hard quantizer equals uniform quantizer", hard_equivalence),
        ("gradient suite", gradient_suite),
        ("clipped-branch exactness", clipped_branches),
        ("asymptotic approach", asymptotic_approach),
        ("low-bit GEMM bit-exactness", gemm_exactness),
        ("schedule counts", schedule_counts),
        ("deployment-path agreement", deployment_agreement),
        ("training trend", training_trend),
        ("determinism", determinism),
        ("archive round trip", archive_round_trip),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!(
            "{} {:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
