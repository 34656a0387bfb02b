//! Workspace acceptance run: one PASS/FAIL line per criterion, nonzero exit
//! if any criterion fails. Runs sequentially so each wall-clock limit is
//! measured without contention.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dilgp::bench::{run_quad_benchmark, run_synthetic_benchmark, QuadBenchConfig, SyntheticBenchConfig, SyntheticKind};
use dilgp::quad::TrajectoryKind;

type Check = support::Check;

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn timed(id: u32, name: &'static str, limit: Option<Duration>, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    detail.push_str(&format!("; {:.1} s", elapsed.as_secs_f64()));
    if let Some(limit) = limit {
        if elapsed > limit {
            passed = false;
            detail.push_str(&format!(" exceeds the {} s limit", limit.as_secs()));
        }
    }
    let o = Outcome { id, name, passed, detail };
    println!("[{}] criterion {:>2} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    o
}

fn synthetic_1d() -> Check {
    let r = run_synthetic_benchmark(&SyntheticBenchConfig::new(SyntheticKind::Synthetic1d)).map_err(|e| e.to_string())?;
    let (dil, gp, cov) = (r.dil.rmse(), r.gp.rmse(), r.dil.coverage());
    let detail = format!(
        "DIL-GP {dil} (lambda {:?}, lr {}), GP {gp} (lr {}), DIL-GP coverage {:.4}",
        r.dil.lambda.unwrap_or(0.0),
        r.dil.learning_rate,
        r.gp.learning_rate,
        cov.mean
    );
    if dil.mean < gp.mean && (0.25..=0.45).contains(&dil.mean) && cov.mean >= 0.85 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn synthetic_2d() -> Check {
    let r = run_synthetic_benchmark(&SyntheticBenchConfig::new(SyntheticKind::Synthetic2d)).map_err(|e| e.to_string())?;
    let (dil, gp) = (r.dil.rmse(), r.gp.rmse());
    let reduction = 1.0 - dil.mean / gp.mean;
    let detail = format!("DIL-GP {dil}, GP {gp}, reduction {:.1}%", 100.0 * reduction);
    if reduction >= 0.10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn quad() -> Check {
    let r = run_quad_benchmark(&QuadBenchConfig::default()).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut others_ok = 0;
    let mut fig8_ok = false;
    for kind in TrajectoryKind::ALL {
        let (not_worse, total) = r.wins(kind);
        let ties = r.runs.iter().filter(|c| c.trajectory == kind && c.dil_test_ace == c.gp_test_ace).count();
        let (dil, gp) = r.held_out(kind);
        parts.push(format!("{} {not_worse}/{total} ({ties} ties, held-out ACE {dil} vs {gp})", kind.name()));
        let ok = not_worse * 5 >= 4 * total;
        if kind == TrajectoryKind::Fig8 {
            fig8_ok = ok;
        } else {
            others_ok += usize::from(ok);
        }
    }
    let detail = format!("DIL-GP not worse: {}", parts.join("; "));
    if fig8_ok && others_ok >= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dilgp(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dilgp")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("dilgp {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Every file the run wrote except the manifest, whose wall-clock field is
/// informational.
fn output_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name != "manifest.json" {
            files.push((name, std::fs::read(entry.path()).map_err(|e| e.to_string())?));
        }
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [(&str, &[&str]); 3] = [
        ("generate", &["generate", "--generator", "synthetic_2d", "--seed", "7"]),
        ("fit-eval", &["fit-eval", "--model", "dil_gp", "--generator", "synthetic_1d", "--seed", "3"]),
        ("bo", &["bo", "--objective", "quadratic", "--t-bo", "15", "--seed", "2"]),
    ];
    let mut checked = Vec::new();
    for (name, args) in runs {
        let first = tmp.path().join(format!("{name}-a"));
        let second = tmp.path().join(format!("{name}-b"));
        let mut argv = args.to_vec();
        let first_s = first.to_string_lossy().into_owned();
        argv.extend(["--out", &first_s]);
        dilgp(&argv)?;
        let manifest = first.join("manifest.json").to_string_lossy().into_owned();
        dilgp(&["reproduce", "--manifest", &manifest, "--out", &second.to_string_lossy()])?;
        let (a, b) = (output_files(&first)?, output_files(&second)?);
        if a.is_empty() || a != b {
            return Err(format!("{name}: rerun differs from the original outputs"));
        }
        checked.push(format!("{name} ({} files)", a.len()));
    }
    Ok(format!("byte-identical reruns: {}", checked.join(", ")))
}

fn main() -> ExitCode {
    let mut outcomes = vec![
        timed(1, "GP oracle equivalence", Some(Duration::from_secs(1)), support::gp_oracle_equivalence),
        timed(2, "environment likelihood reduction", None, support::env_likelihood_reduction),
        timed(3, "gradient suite", Some(Duration::from_secs(10)), support::gradient_suite),
        timed(4, "1-d synthetic benchmark", Some(Duration::from_secs(300)), synthetic_1d),
        timed(5, "2-d synthetic benchmark", Some(Duration::from_secs(300)), synthetic_2d),
        timed(6, "information-gain identity", None, support::info_gain_identity),
        timed(7, "BO convergence and regret bound", Some(Duration::from_secs(120)), support::bo_convergence),
        timed(8, "quadrotor held-out tuning", Some(Duration::from_secs(900)), quad),
        timed(9, "determinism from manifests", None, determinism),
    ];
    let shadow = outcomes.iter().filter(|o| o.id == 4 || o.id == 5).all(|o| o.passed);
    outcomes.push(timed(10, "OOD risk shadow (criteria 4 and 5)", None, || {
        if shadow {
            Ok("DIL-GP test RMSE below GP on both shifted benchmarks".into())
        } else {
            Err("criterion 4 or 5 failed".into())
        }
    }));
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
