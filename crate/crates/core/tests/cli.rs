use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsq_core::analysis::histogram_report;
use dsq_core::archive::{ModelArchive, Payload};
use tempfile::TempDir;

fn dsq(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsq"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const CONFIG: &str = "
[data]
kind = moons
samples = 256
test_samples = 128
noise = 0.1

[model]
hidden = 8, 8

[train]
epochs = 4
";

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn train_into(dir: &Path, cfg: &Path, out: &str) -> PathBuf {
    let out_dir = dir.join(out);
    ok(&dsq(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        dir,
    ));
    out_dir
}

#[test]
fn train_writes_trace_and_model() {
    let (dir, cfg) = setup(CONFIG);
    let out = dsq(
        &["train", "--config", cfg.to_str().unwrap(), "--out", "run"],
        dir.path(),
    );
    let stdout = ok(&out);
    assert!(stdout.contains("test accuracy"));
    let trace = fs::read_to_string(dir.path().join("run/trace.tsv")).unwrap();
    assert!(trace.starts_with("# dsq-trace v1"));
    let archive = ModelArchive::load(&dir.path().join("run/model.dsqa")).unwrap();
    assert_eq!(archive.to_network().unwrap().layers().len(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, cfg) = setup(CONFIG);
    let a = train_into(dir.path(), &cfg, "a");
    let b = train_into(dir.path(), &cfg, "b");
    for file in ["trace.tsv", "model.dsqa"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let c = dir.path().join("c");
    ok(&dsq(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            c.to_str().unwrap(),
        ],
        dir.path(),
    ));
    assert_ne!(
        fs::read(a.join("trace.tsv")).unwrap(),
        fs::read(c.join("trace.tsv")).unwrap()
    );
}

#[test]
fn rejects_alpha_init_outside_range() {
    let (dir, cfg) = setup(&format!("{CONFIG}\n[quant]\nalpha_init = 0.7\n"));
    let out = dsq(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alpha_init"), "{err}");
    assert!(!dir.path().join("trace.tsv").exists());
}

#[test]
fn rejects_unknown_keys_with_line_number() {
    let (dir, cfg) = setup("[train]\nepochs = 2\nlearnig_rate = 0.1\n");
    let out = dsq(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("line 3") && err.contains("train.learnig_rate"),
        "{err}"
    );
}

#[test]
fn divergence_exits_with_code_3() {
    let (dir, cfg) = setup(
        &format!("{CONFIG}\n[quant]\nmethod = ste\n")
            .replace("epochs = 4", "epochs = 4\nlearning_rate = 1e30"),
    );
    let out = dsq(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn bench_reports_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bench.txt");
    let out = dsq(
        &[
            "bench",
            "--sizes",
            "16x16x217",
            "--reps",
            "1",
            "--debug-instrument",
            "--out",
            report.to_str().unwrap(),
        ],
        dir.path(),
    );
    ok(&out);
    let text = fs::read_to_string(report).unwrap();
    let ratios: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('M'))
        .map(|l| l.split_whitespace().nth(6).unwrap())
        .collect();
    assert_eq!(ratios, ["31.000", "7.000", "1.000"]);
    assert!(text.contains("# widens per MAC increase with bit width: yes"));
}

#[test]
fn sweep_has_one_row_per_alpha() {
    let (dir, cfg) = setup(CONFIG);
    let run = train_into(dir.path(), &cfg, "run");
    let csv = dir.path().join("sweep.csv");
    ok(&dsq(
        &[
            "sweep",
            run.join("model.dsqa").to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--alpha",
            "0.4,0.1,0.01",
            "--out",
            csv.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn analyze_matches_in_memory_histograms() {
    let (dir, cfg) = setup(CONFIG);
    let run = train_into(dir.path(), &cfg, "run");
    let report = dir.path().join("report");
    ok(&dsq(
        &[
            "analyze",
            run.join("model.dsqa").to_str().unwrap(),
            "--trace",
            run.join("trace.tsv").to_str().unwrap(),
            "--bins",
            "32",
            "--out",
            report.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let archive = ModelArchive::load(&run.join("model.dsqa")).unwrap();
    let rec = archive.find("layer1.weight").unwrap();
    let want = histogram_report(&rec.tensor().unwrap(), &rec.quant.params().unwrap(), 32).unwrap();
    assert_eq!(
        fs::read_to_string(report.join("hist_layer1_weight.csv")).unwrap(),
        want.to_csv()
    );
    for file in [
        "errors.csv",
        "alpha_table.txt",
        "alpha_table.csv",
        "alpha_trace.csv",
    ] {
        assert!(report.join(file).exists(), "{file}");
    }
}

#[test]
fn export_import_and_quantize() {
    let (dir, cfg) = setup(CONFIG);
    let run = train_into(dir.path(), &cfg, "run");
    let model = run.join("model.dsqa");
    let coded = dir.path().join("coded.dsqa");
    ok(&dsq(
        &[
            "export",
            model.to_str().unwrap(),
            "--out",
            coded.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let archive = ModelArchive::load(&coded).unwrap();
    assert!(matches!(
        archive.find("layer1.weight").unwrap().payload,
        Payload::Codes(_)
    ));

    let again = dir.path().join("again.dsqa");
    let summary = ok(&dsq(
        &[
            "import",
            coded.to_str().unwrap(),
            "--out",
            again.to_str().unwrap(),
        ],
        dir.path(),
    ));
    assert!(summary.contains("3 layers"));
    assert_eq!(fs::read(&coded).unwrap(), fs::read(&again).unwrap());

    let ptq = dir.path().join("ptq.dsqa");
    ok(&dsq(
        &[
            "quantize",
            model.to_str().unwrap(),
            "--bits",
            "3",
            "--out",
            ptq.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let q = ModelArchive::load(&ptq).unwrap();
    assert_eq!(q.find("layer1.weight").unwrap().quant.bits, 3);

    let bad = dir.path().join("bad.dsqa");
    fs::write(&bad, b"not an archive").unwrap();
    let out = dsq(&["import", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
