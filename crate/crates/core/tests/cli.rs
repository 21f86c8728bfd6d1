//! End-to-end runs of the `trimem` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trimem::harness::metrics::parse_record;

const SMALL: &str = "\
[network]
layer_sizes = 6,8,2

[microsleep]
interval = 5
minor_step = true

[hebbian]
weight_cap = 1.0

[stream]
kind = permuted
input_dim = 6
n_classes = 2
n_tasks = 2
samples_per_task = 40

[run]
seeds = 0,1
name = small
output_dir = ignored
";

fn trimem(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trimem"))
        .args(args)
        .env("TRIMEM_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.ini");
    fs::write(&p, text).unwrap();
    p
}

fn error_record(out: &Output) -> serde_json::Map<String, serde_json::Value> {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("diagnostic line");
    let rec = parse_record(line).expect("diagnostic is a record");
    assert_eq!(rec["record"], "error");
    rec
}

#[test]
fn run_writes_metrics_and_checkpoints_under_env_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out_dir = tmp.path().join("out");
    let out = trimem(&["run", cfg.to_str().unwrap()], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("ignored").exists());

    let metrics = out_dir.join("small-full.jsonl");
    let text = fs::read_to_string(&metrics).unwrap();
    let kinds: Vec<String> = text
        .lines()
        .map(|l| parse_record(l).unwrap()["record"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.iter().filter(|k| *k == "eval").count(), 4);
    assert_eq!(kinds.iter().filter(|k| *k == "summary").count(), 2);
    assert!(kinds.iter().any(|k| k == "night"));
    for s in 0..2 {
        assert!(out_dir.join(format!("small-full-seed{s}.ckpt")).exists());
    }

    let ck = out_dir.join("small-full-seed1.ckpt");
    let inspect = trimem(&["inspect", ck.to_str().unwrap()], &out_dir);
    assert!(inspect.status.success());
    let report = String::from_utf8_lossy(&inspect.stdout);
    assert!(report.contains("day_index      2"), "{report}");
    assert!(report.contains("experts        2"), "{report}");

    let csv_path = tmp.path().join("m.csv");
    let export = trimem(
        &["export", metrics.to_str().unwrap(), "--format", "csv", "--output", csv_path.to_str().unwrap()],
        &out_dir,
    );
    assert!(export.status.success());
    let csv = fs::read_to_string(csv_path).unwrap();
    assert!(csv.contains("# day"));
    assert!(csv.contains("# summary"));
}

#[test]
fn compare_runs_each_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = trimem(&["compare", cfg.to_str().unwrap(), "--baselines", "naive,ewc-only"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("naive"));
    assert!(stdout.contains("ewc-only"));
    assert!(tmp.path().join("small-naive.jsonl").exists());
    assert!(tmp.path().join("small-ewc-only.jsonl").exists());
    assert!(!tmp.path().join("small-full.jsonl").exists());
}

#[test]
fn config_errors_exit_one_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &format!("{SMALL}\n[nightly]\nmystery = 3\n"));
    let out = trimem(&["run", cfg.to_str().unwrap()], &out_dir);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["exit_code"], 1);
    assert!(!out_dir.exists());

    let cfg = write_config(tmp.path(), SMALL);
    let out = trimem(&["compare", cfg.to_str().unwrap(), "--baselines", "naive,bogus"], &out_dir);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_files_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.ini");
    let out = trimem(&["run", missing.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["exit_code"], 3);
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, b"NOTACHECKPOINT").unwrap();
    let out = trimem(&["inspect", bad.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = error_record(&out)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("format"), "{msg}");
}

#[test]
fn defaults_match_reference_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = trimem(&["defaults"], tmp.path());
    assert!(out.status.success());
    let printed = trimem::harness::RunConfig::parse(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let reference = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/defaults.ini")).unwrap();
    assert_eq!(printed, trimem::harness::RunConfig::parse(&reference).unwrap());
    assert_eq!(printed, trimem::harness::RunConfig::default());
}
