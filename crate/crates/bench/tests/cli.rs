use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use whitebench::RunManifest;

const BASE: &str = r#"
seed = 5

[data]
n_samples = 200
alpha = { LIN = 1.0, XOR = 1.0 }

[train]
epochs = 40
"#;

fn whitebench(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("bench.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_whitebench"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn one_cell(scenario: &str, model: &str, methods: &str) -> String {
    format!(
        "{BASE}\n[[cells]]\nscenario = \"{scenario}\"\nbackground = \"WHITE\"\nwhitening = \"none\"\nmodel = \"{model}\"\nmethods = [{methods}]\n"
    )
}

#[test]
fn empty_plan_succeeds_and_records_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = whitebench(dir.path(), BASE, &["run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = RunManifest::load_or_default(&dir.path().join("out")).unwrap();
    assert_eq!(manifest.runs, 1);
    assert!(manifest.records.is_empty());
}

#[test]
fn one_cell_run_then_cached_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = one_cell("LIN", "LLR", "\"saliency\", \"sobel\"");
    let first = whitebench(dir.path(), &cfg, &["run"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("1 completed"), "{}", stdout(&first));

    let out = dir.path().join("out");
    let cell_metrics = out.join("cells/LIN_WHITE_none_LLR/metrics.csv");
    let before = fs::read(&cell_metrics).unwrap();
    let manifest = RunManifest::load_or_default(&out).unwrap();
    let rec = &manifest.records[0];
    // 20 test samples at the default 0.8/0.1/0.1 split; one row per correct sample per method
    let correct = (rec.test_accuracy.unwrap() * 20.0).round() as usize;
    assert_eq!(rec.metrics_rows, 2 * correct);
    assert_eq!(String::from_utf8_lossy(&before).lines().count(), 1 + 2 * correct);
    assert!(out.join("heatmaps/LIN_WHITE_none_LLR__saliency.pgm").is_file());

    let second = whitebench(dir.path(), &cfg, &["run"]);
    assert!(second.status.success());
    assert!(stdout(&second).contains("1 cached"), "{}", stdout(&second));
    assert_eq!(fs::read(&cell_metrics).unwrap(), before);
    let manifest = RunManifest::load_or_default(&out).unwrap();
    assert_eq!(manifest.runs, 2);
    assert_eq!(manifest.records.len(), 2);

    let agg = whitebench(dir.path(), &cfg, &["aggregate"]);
    assert!(agg.status.success());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn gated_cell_is_excluded_without_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = whitebench(dir.path(), &one_cell("XOR", "LLR", "\"saliency\""), &["run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("1 excluded"), "{}", stdout(&o));
    assert!(!dir.path().join("out/cells/XOR_WHITE_none_LLR/metrics.csv").exists());
}

#[test]
fn cell_selector_filters_the_plan() {
    let dir = tempfile::tempdir().unwrap();
    let o = whitebench(dir.path(), &one_cell("LIN", "LLR", "\"sobel\""), &["--cell", "XOR/*", "run"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("0 completed"), "{}", stdout(&o));
    let bad = whitebench(dir.path(), BASE, &["--cell", "LIN/WHITE/none/LLR/extra", "run"]);
    assert!(!bad.status.success());
}

#[test]
fn theory2d_writes_report_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let o = whitebench(dir.path(), BASE, &["theory2d", "--c", "0.5", "--n", "50"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let base = dir.path().join("out/theory2d");
    for f in ["report.csv", "scatter.csv", "boundary.csv"] {
        assert!(base.join(f).is_file(), "{f}");
    }
    let scatter = fs::read_to_string(base.join("scatter.csv")).unwrap();
    assert!(scatter.starts_with("method,label,x1,x2"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = whitebench(dir.path(), "sed = 1\n", &["run"]);
    assert!(!o.status.success());
}
