//! Command bodies. Each takes a resolved config and an output directory and
//! returns the manifest it wrote.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use dilgp::bench::{fit_evaluate, held_out_ace, test_flight_seeds, train_flight_seeds, tune_pid, FitSpec, MeanMaxDev, ModelChoice, QuadBenchConfig};
use dilgp::bo::{bo_run, BoOutcome, BoSummary, SearchSpace};
use dilgp::data::{load_csv, Dataset};
use dilgp::gp::{GpModel, KernelParams, NoiseSpec};
use dilgp::quad::{simulate_with, PidGains};
use dilgp::seed;
use serde::Serialize;
use serde_json::Value;

use crate::config::{BoCmdConfig, CommandConfig, DatasetConfig, FitEvalConfig, GenerateConfig, ObjectiveConfig};
use crate::manifest::{sha256_hex, OutputDir, RunManifest, CONFIG_FILE};

pub fn run(cfg: &CommandConfig, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    let config_text = cfg.to_toml()?;
    let mut dir = OutputDir::create(out)?;
    dir.write(CONFIG_FILE, config_text.as_bytes())?;
    match cfg {
        CommandConfig::Generate(c) => generate(c, &mut dir)?,
        CommandConfig::FitEval(c) => fit_eval(c, &mut dir)?,
        CommandConfig::Bo(c) => bo(c, &mut dir)?,
    }
    dir.finish(RunManifest {
        command: cfg.name().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        config: config_text,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: BTreeMap::new(),
    })
}

fn csv_bytes(d: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    d.write_csv(&mut buf)?;
    Ok(buf)
}

fn generate(cfg: &GenerateConfig, dir: &mut OutputDir) -> Result<()> {
    let (train, test) = cfg.generator.generate(cfg.seed, cfg.options());
    dir.write("train.csv", &csv_bytes(&train)?)?;
    dir.write("test.csv", &csv_bytes(&test)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SeedReport {
    seed: u64,
    rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    coverage_rate: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    per_domain_rmse: BTreeMap<i64, f64>,
    params: KernelParams,
    noise_sigma2: f64,
}

#[derive(Serialize)]
struct SweepSummary {
    rmse: MeanMaxDev,
    #[serde(skip_serializing_if = "Option::is_none")]
    coverage_rate: Option<MeanMaxDev>,
}

/// Top-level `rmse` / `coverage_rate` are means over the seeds (the single
/// run's values when there is one seed).
#[derive(Serialize)]
struct FitEvalReport {
    model: &'static str,
    rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    coverage_rate: Option<f64>,
    n_test: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    per_domain_rmse: BTreeMap<i64, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<SweepSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    domain_labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropped_rows: Option<BTreeMap<&'static str, usize>>,
    runs: Vec<SeedReport>,
}

fn fit_eval(cfg: &FitEvalConfig, dir: &mut OutputDir) -> Result<()> {
    let mut fixed: Option<(Dataset, Dataset)> = None;
    let mut domain_labels = Vec::new();
    let mut dropped_rows = None;
    if let (DatasetConfig::Csv { train, test, .. }, Some(cols)) = (&cfg.dataset, cfg.dataset.csv_columns()) {
        let tr = load_csv(train, &cols)?;
        let te = load_csv(test, &cols)?;
        domain_labels = if tr.domain_labels.len() >= te.domain_labels.len() { tr.domain_labels } else { te.domain_labels };
        dropped_rows = Some(BTreeMap::from([("train", tr.dropped_rows), ("test", te.dropped_rows)]));
        fixed = Some((tr.dataset, te.dataset));
    }
    let init = GpModel::new(cfg.model.kernel(), cfg.init.params()?, NoiseSpec::new(cfg.init.noise)?);
    let mut runs = Vec::new();
    let mut trace = String::new();
    let mut n_test = 0;
    for &s in &cfg.seeds {
        let (train, test) = match (&fixed, &cfg.dataset) {
            (Some(d), _) => d.clone(),
            (None, DatasetConfig::Synthetic { generator, noise, noise_scale }) => generator.generate(
                s,
                dilgp::data::SyntheticOptions {
                    noise: *noise,
                    noise_scale: *noise_scale,
                },
            ),
            (None, DatasetConfig::Csv { .. }) => unreachable!("csv data is loaded above"),
        };
        let spec = match (cfg.model, &cfg.dil, &cfg.gp) {
            (ModelChoice::DilGp, Some(d), _) => FitSpec::Dil {
                init,
                cfg: d.train_config(seed::derive(s, "bench/dil")),
            },
            (_, _, Some(g)) => FitSpec::Vanilla {
                init,
                cfg: g.vanilla_config(),
            },
            _ => unreachable!("resolved config carries the section for its model"),
        };
        let outcome = fit_evaluate(&spec, &train, &test)?;
        for rec in &outcome.trace.records {
            let mut v = serde_json::to_value(rec)?;
            if let Value::Object(m) = &mut v {
                m.insert("seed".into(), Value::from(s));
            }
            trace.push_str(&serde_json::to_string(&v)?);
            trace.push('\n');
        }
        n_test = outcome.report.n_test;
        runs.push(SeedReport {
            seed: s,
            rmse: outcome.report.rmse,
            coverage_rate: outcome.report.coverage_rate,
            per_domain_rmse: outcome.report.per_domain_rmse,
            params: outcome.model.params,
            noise_sigma2: outcome.model.noise.sigma2,
        });
    }
    let rmse = MeanMaxDev::of(&runs.iter().map(|r| r.rmse).collect::<Vec<_>>());
    let coverages: Vec<f64> = runs.iter().filter_map(|r| r.coverage_rate).collect();
    let coverage = (!coverages.is_empty()).then(|| MeanMaxDev::of(&coverages));
    let mut per_domain: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in &runs {
        for (tag, v) in &r.per_domain_rmse {
            per_domain.entry(*tag).or_default().push(*v);
        }
    }
    let report = FitEvalReport {
        model: cfg.model.name(),
        rmse: rmse.mean,
        coverage_rate: coverage.map(|c| c.mean),
        n_test,
        per_domain_rmse: per_domain.into_iter().map(|(k, v)| (k, MeanMaxDev::of(&v).mean)).collect(),
        summary: (runs.len() > 1).then_some(SweepSummary { rmse, coverage_rate: coverage }),
        domain_labels,
        dropped_rows,
        runs,
    };
    dir.write_json("report.json", &report)?;
    dir.write("trace.jsonl", trace.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct QuadraticSummary {
    objective: &'static str,
    optimum: Vec<f64>,
    incumbent_distance: f64,
    #[serde(flatten)]
    summary: BoSummary,
}

#[derive(Serialize)]
struct PidSummary {
    objective: &'static str,
    trajectory: &'static str,
    gains: PidGains,
    train_ace: f64,
    held_out_ace: f64,
    #[serde(flatten)]
    summary: BoSummary,
}

fn bo(cfg: &BoCmdConfig, dir: &mut OutputDir) -> Result<()> {
    let outcome: BoOutcome = match &cfg.objective {
        ObjectiveConfig::Quadratic { dim, center } => {
            let c = *center;
            let outcome = bo_run(
                |x: &[f64]| x.iter().map(|v| (v - c) * (v - c)).sum(),
                &SearchSpace::unit(*dim),
                &cfg.bo,
                seed::derive(cfg.seed, "bo/quadratic"),
            )?;
            let distance = outcome.state.incumbent_x.iter().map(|v| (v - c).abs()).fold(0.0, f64::max);
            dir.write_json(
                "summary.json",
                &QuadraticSummary {
                    objective: "quadratic",
                    optimum: vec![c; *dim],
                    incumbent_distance: distance,
                    summary: outcome.summary(),
                },
            )?;
            outcome
        }
        ObjectiveConfig::QuadPid {
            trajectory,
            train_flights,
            test_flights,
            train_wind,
            test_wind,
            sim,
        } => {
            let bench = QuadBenchConfig {
                trajectories: vec![*trajectory],
                experiment_seeds: vec![cfg.seed],
                train_wind: *train_wind,
                test_wind: *test_wind,
                train_flights: *train_flights,
                test_flights: *test_flights,
                sim: *sim,
                bo: cfg.bo.clone(),
                dil: cfg.bo.surrogate.clone(),
                gp: cfg.bo.surrogate.clone(),
            };
            let outcome = tune_pid(*trajectory, &cfg.bo.surrogate, &bench, cfg.seed)?;
            let gains = PidGains::from_slice(&outcome.state.incumbent_x)?;
            let held_out = held_out_ace(gains, *trajectory, &bench, cfg.seed)?;
            dir.write_json(
                "summary.json",
                &PidSummary {
                    objective: "quad_pid",
                    trajectory: trajectory.name(),
                    gains,
                    train_ace: outcome.state.incumbent_f,
                    held_out_ace: held_out,
                    summary: outcome.summary(),
                },
            )?;
            let train_seed = train_flight_seeds(cfg.seed, 1)[0];
            let test_seed = test_flight_seeds(cfg.seed, 1)[0];
            let mut buf = Vec::new();
            simulate_with(gains, *trajectory, train_wind, train_seed, sim)?.write_csv(&mut buf)?;
            dir.write("trajectory_train.csv", &buf)?;
            let mut buf = Vec::new();
            simulate_with(gains, *trajectory, test_wind, test_seed, sim)?.write_csv(&mut buf)?;
            dir.write("trajectory_test.csv", &buf)?;
            outcome
        }
    };
    dir.write("trace.jsonl", outcome.trace_jsonl().as_bytes())?;
    Ok(())
}
