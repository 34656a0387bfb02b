use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dilgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dilgp")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = dilgp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn arg(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn generate_writes_the_two_cluster_split_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["generate", "--generator", "synthetic_1d", "--seed", "0", "--out", &arg(&a)]);
    ok(&["generate", "--generator", "synthetic_1d", "--seed", "0", "--out", &arg(&b)]);
    let train = std::fs::read_to_string(a.join("train.csv")).unwrap();
    assert_eq!(train.lines().count(), 116);
    for f in ["train.csv", "test.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["command"], "generate");
    assert!(manifest["outputs"]["train.csv"].as_str().unwrap().len() == 64);
}

#[test]
fn unknown_generator_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("none");
    let out = dilgp(&["generate", "--generator", "moons", "--out", &arg(&out_dir)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("synthetic_1d") && err.contains("synthetic_2d"), "{err}");
    assert!(!out_dir.exists());
}

#[test]
fn fit_eval_reports_rmse_and_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("fit");
    ok(&["fit-eval", "--model", "dil_gp", "--generator", "synthetic_1d", "--t1", "20", "--out", &arg(&dir)]);
    let report = json(&dir.join("report.json"));
    assert!(report["rmse"].as_f64().unwrap() > 0.0);
    let c = report["coverage_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&c));
    let trace = std::fs::read_to_string(dir.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 20);
}

#[test]
fn plain_gp_config_has_no_penalty_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("gp");
    ok(&["fit-eval", "--model", "gp_gaussian", "--generator", "synthetic_1d", "--steps", "10", "--out", &arg(&dir)]);
    let config = std::fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(!config.contains("lambda"), "{config}");
    let out = dilgp(&["fit-eval", "--model", "gp_gaussian", "--lambda", "1", "--out", &arg(&tmp.path().join("bad"))]);
    assert!(!out.status.success());
}

#[test]
fn sweep_reports_mean_and_max_deviation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sweep");
    ok(&["fit-eval", "--model", "gp_gaussian", "--generator", "synthetic_1d", "--sweep", "--steps", "20", "--out", &arg(&dir)]);
    let report = json(&dir.join("report.json"));
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 5);
    let rmses: Vec<f64> = runs.iter().map(|r| r["rmse"].as_f64().unwrap()).collect();
    let mean = rmses.iter().sum::<f64>() / 5.0;
    let dev = rmses.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max);
    let summary = &report["summary"]["rmse"];
    assert!((summary["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((summary["max_dev"].as_f64().unwrap() - dev).abs() < 1e-12);
    assert!(report["summary"]["coverage_rate"]["mean"].is_number());
}

#[test]
fn builtin_quadratic_finds_its_optimum() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bo");
    ok(&["bo", "--objective", "quadratic", "--t-bo", "30", "--seed", "0", "--out", &arg(&dir)]);
    let summary = json(&dir.join("summary.json"));
    assert!(summary["incumbent_distance"].as_f64().unwrap() <= 0.05, "{summary}");
    assert_eq!(summary["regret_within_bound"], true);
    let trace = std::fs::read_to_string(dir.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 30);
}

#[test]
fn quad_pid_run_logs_every_proposal_and_flights() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("pid");
    ok(&["bo", "--objective", "quad_pid", "--trajectory", "fig8", "--t-bo", "100", "--out", &arg(&dir)]);
    let trace = std::fs::read_to_string(dir.join("trace.jsonl")).unwrap();
    let records: Vec<Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 100);
    assert!(records.iter().enumerate().all(|(i, r)| r["step"] == i + 1));
    let summary = json(&dir.join("summary.json"));
    assert!(summary["held_out_ace"].as_f64().unwrap().is_finite());
    assert_eq!(summary["evaluations"], 105);
    let csv = std::fs::read_to_string(dir.join("trajectory_test.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,x,y,z,ref_x,ref_y,ref_z");
}

#[test]
fn help_documents_every_command() {
    let out = dilgp(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["generate", "fit-eval", "bo", "reproduce"] {
        assert!(text.contains(cmd), "{text}");
    }
    let out = dilgp(&["bo", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--objective", "--surrogate", "--acquisition", "--t-bo", "--seed", "--config", "--out"] {
        assert!(text.contains(flag), "{flag}");
    }
}
