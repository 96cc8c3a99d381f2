use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dsq_core::analysis::{alpha_sweep, alpha_table, decompose_error, histogram_report, trace_csv};
use dsq_core::archive::{ModelArchive, Payload, RecordKind};
use dsq_core::config::RunConfig;
use dsq_core::gemm::{bench_gemm, mac_budget, Backend, GemmOptions};
use dsq_core::nn::{evaluate, train, ClipPolicy, TrainTrace};
use dsq_core::quant::QuantParams;
use dsq_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dsq",
    version,
    about = "Differentiable soft quantization toolkit"
)]
struct Cli {
    /// Log debug output.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Scalar,
    Lanes,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a config file; writes a trace and a float archive.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `quant.bits`.
        #[arg(long)]
        bits: Option<u8>,
        /// Overrides `quant.alpha_init`.
        #[arg(long)]
        alpha: Option<f64>,
        /// Output directory for `trace.tsv` and `model.dsqa` when the config
        /// names no paths.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Post-training quantization of the inner-layer weights of an archive.
    Quantize {
        model: PathBuf,
        #[arg(long)]
        bits: u8,
        #[arg(long, default_value = "learned")]
        policy: ClipPolicy,
        #[arg(long, default_value_t = 0.9)]
        ma_decay: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histograms, error decomposition and (with a trace) alpha tables.
    Analyze {
        model: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy under soft, soft+sign and uniform quantization per alpha.
    Sweep {
        model: PathBuf,
        /// Config that defines the evaluation data.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.4, 0.2, 0.1, 0.05, 0.01, 0.002])]
        alpha: Vec<f64>,
        /// CSV output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Low-bit GEMM timings and widening schedule.
    Bench {
        /// `MxNxK` triples.
        #[arg(long, value_delimiter = ',', default_values_t = vec!["64x64x217".to_string(), "128x128x434".to_string()])]
        sizes: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2u8, 3, 4])]
        bits: Vec<u8>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, value_enum, default_value = "scalar")]
        backend: BackendArg,
        /// Also run the instrumented kernel and fail on any accumulator
        /// overflow.
        #[arg(long)]
        debug_instrument: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Store quantized weights of a float archive as integer codes.
    Export {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate an archive, rebuild its network and print a summary.
    Import {
        model: PathBuf,
        /// Re-encoded archive (byte-identical for valid input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_train(
    config: &Path,
    seed: Option<u64>,
    bits: Option<u8>,
    alpha: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(b) = bits {
        cfg.model.bits = b;
    }
    if let Some(a) = alpha {
        cfg.train.alpha_init = a;
    }
    cfg.validate()?;
    let dir = out.unwrap_or_else(|| PathBuf::from("."));
    let trace_path = cfg
        .output
        .trace
        .clone()
        .unwrap_or_else(|| dir.join("trace.tsv"));
    let model_path = cfg
        .output
        .model
        .clone()
        .unwrap_or_else(|| dir.join("model.dsqa"));

    let (data, test) = cfg.datasets()?;
    let mut net = cfg.build_network(&data)?;
    let trace = train(&mut net, &data, &cfg.train)?;
    write(&trace_path, &trace.to_text())?;
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ModelArchive::from_network(&net, false).save(&model_path)?;

    let (loss, acc) = evaluate(&net, &data, &cfg.train.eval_pass())?;
    println!(
        "steps {}  train loss {loss:.6}  train accuracy {acc:.4}",
        trace.records.len()
    );
    if let Some(test) = test {
        let (_, acc) = evaluate(&net, &test, &cfg.train.eval_pass())?;
        println!("test accuracy {acc:.4}");
    }
    println!(
        "trace {}  model {}",
        trace_path.display(),
        model_path.display()
    );
    Ok(())
}

fn cmd_quantize(
    model: &Path,
    bits: u8,
    policy: ClipPolicy,
    ma_decay: f64,
    out: &Path,
) -> Result<()> {
    let q = ModelArchive::load(model)?.quantize(bits, policy, ma_decay)?;
    q.save(out)?;
    let coded = q
        .records
        .iter()
        .filter(|r| matches!(r.payload, Payload::Codes(_)))
        .count();
    println!(
        "{coded} tensors quantized to {bits} bits -> {}",
        out.display()
    );
    Ok(())
}

fn cmd_analyze(model: &Path, trace: Option<&Path>, bins: usize, out: &Path) -> Result<()> {
    let archive = ModelArchive::load(model)?;
    fs::create_dir_all(out)?;
    let mut errors = String::from(
        "tensor,bits,lower,upper,alpha,clipping_error,rounding_error,total,clipped_fraction\n",
    );
    for rec in &archive.records {
        if !matches!(rec.kind, RecordKind::DenseWeight | RecordKind::ConvWeight)
            || rec.attrs & dsq_core::archive::ATTR_QUANT_WEIGHTS == 0
        {
            continue;
        }
        let t = rec.tensor()?;
        let qp = rec.quant.params()?;
        let stem = rec.name.replace('.', "_");
        let h = histogram_report(&t, &qp, bins.max(qp.levels()))?;
        write(&out.join(format!("hist_{stem}.csv")), &h.to_csv())?;
        let d = decompose_error(&t, &qp)?;
        errors.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            rec.name,
            qp.bits(),
            qp.lower(),
            qp.upper(),
            qp.alpha(),
            d.clipping_error,
            d.rounding_error,
            d.total,
            d.clipped_fraction
        ));
    }
    write(&out.join("errors.csv"), &errors)?;
    if let Some(trace) = trace {
        let trace = TrainTrace::parse(&fs::read_to_string(trace)?)?;
        let table = alpha_table(&trace)?;
        write(&out.join("alpha_table.txt"), &table.to_text())?;
        write(&out.join("alpha_table.csv"), &table.to_csv())?;
        write(&out.join("alpha_trace.csv"), &trace_csv(&trace))?;
        print!("{}", table.to_text());
    }
    println!("reports in {}", out.display());
    Ok(())
}

fn cmd_sweep(model: &Path, config: &Path, alphas: &[f64], out: &Path) -> Result<()> {
    let net = ModelArchive::load(model)?.to_network()?;
    let cfg = RunConfig::load(config)?;
    let (train_set, test) = cfg.datasets()?;
    let data = test.unwrap_or(train_set);
    let sweep = alpha_sweep(&net, &data, alphas)?;
    write(out, &sweep.to_csv())?;
    print!("{}", sweep.to_text());
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    let bad = || Error::InvalidArgument(format!("size `{s}` is not MxNxK"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n = |p: &str| p.trim().parse::<usize>().map_err(|_| bad());
    Ok((n(parts[0])?, n(parts[1])?, n(parts[2])?))
}

fn cmd_bench(
    sizes: &[String],
    bits: &[u8],
    threads: usize,
    reps: usize,
    backend: BackendArg,
    instrument: bool,
    out: Option<&Path>,
) -> Result<()> {
    let sizes = sizes
        .iter()
        .map(|s| parse_size(s))
        .collect::<Result<Vec<_>>>()?;
    let backend = match backend {
        BackendArg::Scalar => Backend::Scalar,
        BackendArg::Lanes => Backend::Lanes,
    };
    let opts = GemmOptions {
        backend,
        threads,
        ..GemmOptions::default()
    };
    let report = bench_gemm(&sizes, bits, &opts, reps, 0)?;
    let mut text = report.to_text();
    if instrument {
        text.push_str("# instrumented: M N K bits macs widens spills macs_per_widen overflow8 overflow16 peak8 peak16\n");
        let mut overflow = false;
        for &(m, n, k) in &sizes {
            for &b in bits {
                let st = instrumented_stats(m, n, k, b, &opts)?;
                overflow |= st.overflow8 + st.overflow16 > 0;
                text.push_str(&format!(
                    "# {m}\t{n}\t{k}\t{b}\t{}\t{}\t{}\t{:.3}\t{}\t{}\t{}\t{}\n",
                    st.macs,
                    st.widens,
                    st.spills,
                    st.macs as f64 / st.widens as f64,
                    st.overflow8,
                    st.overflow16,
                    st.peak8,
                    st.peak16
                ));
            }
        }
        if overflow {
            print!("{text}");
            return Err(Error::InvalidArgument(
                "accumulator overflow detected".into(),
            ));
        }
    }
    if let Some(out) = out {
        write(out, &text)?;
    }
    print!("{text}");
    Ok(())
}

/// Worst-case operands (every code at `-2^(b-1)`) through the instrumented
/// kernel.
fn instrumented_stats(
    m: usize,
    n: usize,
    k: usize,
    bits: u8,
    opts: &GemmOptions,
) -> Result<dsq_core::gemm::GemmStats> {
    mac_budget(bits)?;
    let qp = QuantParams::new(bits, -1.0, 1.0, 0.2)?;
    let low = -(1i8 << (bits - 1));
    let a = dsq_core::gemm::PackedMatrix::from_codes(m, k, vec![low; m * k], qp)?;
    let b = dsq_core::gemm::PackedMatrix::from_codes(k, n, vec![low; k * n], qp)?;
    let (_, st) = dsq_core::gemm::gemm_lowbit_with(
        &a,
        &b,
        &GemmOptions {
            instrument: true,
            ..opts.clone()
        },
    )?;
    Ok(st.unwrap_or_default())
}

fn cmd_export(model: &Path, out: &Path) -> Result<()> {
    let net = ModelArchive::load(model)?.to_network()?;
    ModelArchive::from_network(&net, true).save(out)?;
    println!("deployment archive -> {}", out.display());
    Ok(())
}

fn cmd_import(model: &Path, out: Option<&Path>) -> Result<()> {
    let archive = ModelArchive::load(model)?;
    let net = archive.to_network()?;
    println!(
        "{:<16} {:<12} {:<8} {:<16} {:>4} {:>12} {:>12} {:>8}",
        "name", "kind", "payload", "shape", "bits", "lower", "upper", "alpha"
    );
    for r in &archive.records {
        let payload = match r.payload {
            Payload::Codes(_) => "codes",
            Payload::Values(_) => "f64",
        };
        println!(
            "{:<16} {:<12} {:<8} {:<16} {:>4} {:>12.5} {:>12.5} {:>8.4}",
            r.name,
            format!("{:?}", r.kind),
            payload,
            format!("{:?}", r.shape),
            r.quant.bits,
            r.quant.lower,
            r.quant.upper,
            r.quant.alpha
        );
    }
    println!(
        "{} layers, {} quantizers",
        net.layers().len(),
        net.quantizers().len()
    );
    if let Some(out) = out {
        archive.save(out)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            bits,
            alpha,
            out,
        } => cmd_train(&config, seed, bits, alpha, out),
        Command::Quantize {
            model,
            bits,
            policy,
            ma_decay,
            out,
        } => cmd_quantize(&model, bits, policy, ma_decay, &out),
        Command::Analyze {
            model,
            trace,
            bins,
            out,
        } => cmd_analyze(&model, trace.as_deref(), bins, &out),
        Command::Sweep {
            model,
            config,
            alpha,
            out,
        } => cmd_sweep(&model, &config, &alpha, &out),
        Command::Bench {
            sizes,
            bits,
            threads,
            reps,
            backend,
            debug_instrument,
            out,
        } => cmd_bench(
            &sizes,
            &bits,
            threads,
            reps,
            backend,
            debug_instrument,
            out.as_deref(),
        ),
        Command::Export { model, out } => cmd_export(&model, &out),
        Command::Import { model, out } => cmd_import(&model, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Diverged { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
