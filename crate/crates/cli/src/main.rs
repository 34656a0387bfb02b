//! `dilgp`: reproducible DIL-GP regression and Bayesian-optimization runs.
//!
//! Every command resolves its configuration (defaults, then an optional
//! `--config` TOML file, then flags), writes the resolved form to
//! `config.toml` in the output directory, and finishes with a
//! `manifest.json` holding checksums of everything it wrote.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use dilgp::bench::{ModelChoice, SyntheticKind};
use dilgp::bo::AcquisitionKind;
use dilgp::data::NoiseConvention;
use dilgp::quad::{SimConfig, TrajectoryKind, WindDomainSpec};

use config::{default_surrogate, BoCmdConfig, CommandConfig, DatasetConfig, FitEvalConfig, GenerateConfig, ObjectiveConfig};
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "dilgp", version, about = "Domain-invariant GP regression and Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/test split (train.csv, test.csv).
    Generate(GenerateArgs),
    /// Train a model, evaluate it on the test split, write report.json and trace.jsonl.
    FitEval(FitEvalArgs),
    /// Run Bayesian optimization, write trace.jsonl and summary.json.
    Bo(BoArgs),
    /// Rerun a command from its manifest and compare output checksums.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Generator name: synthetic_1d or synthetic_2d.
    #[arg(long)]
    generator: Option<String>,
    /// Root seed for the data streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Read the generators' noise scale as a standard deviation instead of a variance.
    #[arg(long)]
    noise_as_std: bool,
    /// Multiplier on every noise draw (0 gives noiseless labels).
    #[arg(long)]
    noise_scale: Option<f64>,
}

#[derive(Args)]
struct FitEvalArgs {
    #[command(flatten)]
    common: Common,
    /// Model: dil_gp, gp_gaussian, gp_rq or gp_dp.
    #[arg(long)]
    model: Option<String>,
    /// Synthetic generator (regenerated per seed); ignored when --train/--test are given.
    #[arg(long)]
    generator: Option<String>,
    /// Training CSV (requires --test, --target and --features).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test CSV.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Target column of the CSV files.
    #[arg(long)]
    target: Option<String>,
    /// Comma-separated feature columns of the CSV files.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Column holding ground-truth domains; enables per-domain RMSE.
    #[arg(long)]
    domain_column: Option<String>,
    /// Comma-separated bin edges for a numeric domain column.
    #[arg(long, value_delimiter = ',')]
    domain_bins: Option<Vec<f64>>,
    /// Single seed for data generation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated list of seeds.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Option<Vec<u64>>,
    /// Run five consecutive seeds starting at --seed (default 0) and report mean ± max deviation.
    #[arg(long, conflicts_with = "seeds")]
    sweep: bool,
    /// Invariance penalty weight (dil_gp only).
    #[arg(long)]
    lambda: Option<f64>,
    /// Adversary (partition) step size (dil_gp only).
    #[arg(long)]
    eta1: Option<f64>,
    /// Learner step size (dil_gp only).
    #[arg(long)]
    eta2: Option<f64>,
    /// Outer iterations (dil_gp only).
    #[arg(long)]
    t1: Option<usize>,
    /// Adversary steps per outer iteration (dil_gp only).
    #[arg(long)]
    t2: Option<usize>,
    /// Likelihood-ascent steps (plain GP models only).
    #[arg(long)]
    steps: Option<usize>,
    /// Likelihood-ascent step size (plain GP models only).
    #[arg(long)]
    eta: Option<f64>,
    /// Learn the noise variance jointly with the kernel hyperparameters.
    #[arg(long)]
    learn_noise: Option<bool>,
    /// Initial noise variance (standardized target units).
    #[arg(long)]
    init_noise: Option<f64>,
}

#[derive(Args)]
struct BoArgs {
    #[command(flatten)]
    common: Common,
    /// Objective: quadratic or quad_pid.
    #[arg(long)]
    objective: Option<String>,
    /// Input dimension of the quadratic objective.
    #[arg(long)]
    dim: Option<usize>,
    /// Trajectory for quad_pid: hover, fig8, sin_forward or spiral_up.
    #[arg(long)]
    trajectory: Option<String>,
    /// Surrogate: dil_gp or gp.
    #[arg(long)]
    surrogate: Option<String>,
    /// Acquisition: ucb or ei.
    #[arg(long)]
    acquisition: Option<String>,
    /// Number of surrogate-guided proposals.
    #[arg(long)]
    t_bo: Option<usize>,
    /// Number of initial uniform queries.
    #[arg(long)]
    n_init: Option<usize>,
    /// Root seed for the initial design, refits and flights.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// manifest.json of the run to reproduce.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for the rerun's outputs.
    #[arg(long)]
    out: PathBuf,
}

fn resolve_generate(a: &GenerateArgs) -> Result<CommandConfig> {
    let mut cfg: GenerateConfig = config::load(a.common.config.as_ref())?;
    if let Some(g) = &a.generator {
        cfg.generator = SyntheticKind::parse(g)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.noise_as_std {
        cfg.noise = NoiseConvention::Std;
    }
    if let Some(v) = a.noise_scale {
        cfg.noise_scale = v;
    }
    config::check_seed(cfg.seed)?;
    Ok(CommandConfig::Generate(cfg))
}

fn resolve_fit_eval(a: &FitEvalArgs) -> Result<CommandConfig> {
    let mut cfg: FitEvalConfig = config::load(a.common.config.as_ref())?;
    if let Some(m) = &a.model {
        cfg.model = ModelChoice::parse(m)?;
    }
    match (&a.train, &a.test) {
        (Some(train), Some(test)) => {
            let (Some(target), Some(features)) = (&a.target, &a.features) else {
                bail!("--train/--test need --target and --features");
            };
            cfg.dataset = DatasetConfig::Csv {
                train: train.clone(),
                test: test.clone(),
                target: target.clone(),
                features: features.clone(),
                domain_column: a.domain_column.clone(),
                domain_bins: a.domain_bins.clone(),
            };
        }
        (None, None) => {
            if let Some(g) = &a.generator {
                cfg.dataset = DatasetConfig::Synthetic {
                    generator: SyntheticKind::parse(g)?,
                    noise: NoiseConvention::Variance,
                    noise_scale: 1.0,
                };
            }
            if a.domain_column.is_some() || a.domain_bins.is_some() {
                match &mut cfg.dataset {
                    DatasetConfig::Csv {
                        domain_column,
                        domain_bins,
                        ..
                    } => {
                        if a.domain_column.is_some() {
                            domain_column.clone_from(&a.domain_column);
                        }
                        if a.domain_bins.is_some() {
                            domain_bins.clone_from(&a.domain_bins);
                        }
                    }
                    DatasetConfig::Synthetic { .. } => {
                        bail!("--domain-column applies to CSV data; synthetic data always carries its cluster as the domain")
                    }
                }
            }
        }
        _ => bail!("--train and --test must be given together"),
    }
    if let Some(seeds) = &a.seeds {
        cfg.seeds.clone_from(seeds);
    } else if a.sweep {
        let start = a.seed.unwrap_or(0);
        cfg.seeds = (start..start + 5).collect();
    } else if let Some(s) = a.seed {
        cfg.seeds = vec![s];
    }
    if a.lambda.is_some() || a.eta1.is_some() || a.eta2.is_some() || a.t1.is_some() || a.t2.is_some() {
        let d = cfg.dil.get_or_insert_with(Default::default);
        d.lambda = a.lambda.unwrap_or(d.lambda);
        d.eta1 = a.eta1.unwrap_or(d.eta1);
        d.eta2 = a.eta2.unwrap_or(d.eta2);
        d.t1_outer = a.t1.unwrap_or(d.t1_outer);
        d.t2_inner = a.t2.unwrap_or(d.t2_inner);
    }
    if a.steps.is_some() || a.eta.is_some() {
        let g = cfg.gp.get_or_insert_with(Default::default);
        g.steps = a.steps.unwrap_or(g.steps);
        g.eta = a.eta.unwrap_or(g.eta);
    }
    if let Some(ln) = a.learn_noise {
        if cfg.model == ModelChoice::DilGp {
            cfg.dil.get_or_insert_with(Default::default).learn_noise = ln;
        } else {
            cfg.gp.get_or_insert_with(Default::default).learn_noise = ln;
        }
    }
    if let Some(v) = a.init_noise {
        cfg.init.noise = v;
    }
    Ok(CommandConfig::FitEval(cfg.resolve()?))
}

fn resolve_bo(a: &BoArgs) -> Result<CommandConfig> {
    let mut cfg: BoCmdConfig = config::load(a.common.config.as_ref())?;
    match a.objective.as_deref() {
        None => {}
        Some("quadratic") => {
            if !matches!(cfg.objective, ObjectiveConfig::Quadratic { .. }) {
                cfg.objective = ObjectiveConfig::default();
                cfg.bo.surrogate = default_surrogate(&cfg.objective, true);
            }
        }
        Some("quad_pid") => {
            if !matches!(cfg.objective, ObjectiveConfig::QuadPid { .. }) {
                cfg.objective = ObjectiveConfig::QuadPid {
                    trajectory: TrajectoryKind::Fig8,
                    train_flights: 2,
                    test_flights: 5,
                    train_wind: WindDomainSpec::domain1(),
                    test_wind: WindDomainSpec::domain2(),
                    sim: SimConfig::default(),
                };
                cfg.bo.surrogate = default_surrogate(&cfg.objective, true);
            }
        }
        Some(other) => bail!("unknown objective {other:?}, expected one of [\"quadratic\", \"quad_pid\"]"),
    }
    if let Some(d) = a.dim {
        match &mut cfg.objective {
            ObjectiveConfig::Quadratic { dim, .. } => *dim = d,
            ObjectiveConfig::QuadPid { .. } => bail!("--dim applies to the quadratic objective only"),
        }
    }
    if let Some(t) = &a.trajectory {
        match &mut cfg.objective {
            ObjectiveConfig::QuadPid { trajectory, .. } => *trajectory = TrajectoryKind::parse(t)?,
            ObjectiveConfig::Quadratic { .. } => bail!("--trajectory applies to the quad_pid objective only"),
        }
    }
    match a.surrogate.as_deref() {
        None => {}
        Some("dil_gp") => cfg.bo.surrogate = default_surrogate(&cfg.objective, true),
        Some("gp") => cfg.bo.surrogate = default_surrogate(&cfg.objective, false),
        Some(other) => bail!("unknown surrogate {other:?}, expected one of [\"dil_gp\", \"gp\"]"),
    }
    match a.acquisition.as_deref() {
        None => {}
        Some("ucb") => cfg.bo.acquisition = AcquisitionKind::Ucb,
        Some("ei") => cfg.bo.acquisition = AcquisitionKind::Ei,
        Some(other) => bail!("unknown acquisition {other:?}, expected one of [\"ucb\", \"ei\"]"),
    }
    if let Some(t) = a.t_bo {
        cfg.bo.t_bo = t;
    }
    if let Some(n) = a.n_init {
        cfg.bo.n_init = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(CommandConfig::Bo(cfg.resolve()?))
}

fn reproduce(a: &ReproduceArgs) -> Result<bool> {
    let original = RunManifest::read(&a.manifest)?;
    let cfg = CommandConfig::parse(&original.command, &original.config)?;
    let rerun = commands::run(&cfg, &a.out)?;
    let mut identical = rerun.config_sha256 == original.config_sha256;
    let names: std::collections::BTreeSet<_> = original.outputs.keys().chain(rerun.outputs.keys()).collect();
    for name in names {
        let status = match (original.outputs.get(name), rerun.outputs.get(name)) {
            (Some(a), Some(b)) if a == b => "identical",
            (Some(_), Some(_)) => "DIFFERS",
            (Some(_), None) => "MISSING in rerun",
            (None, _) => "NEW in rerun",
        };
        identical &= status == "identical";
        println!("{name}: {status}");
    }
    println!(
        "{}",
        if identical { "reproduced: all outputs byte-identical" } else { "NOT reproduced" }
    );
    Ok(identical)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => resolve_generate(a).and_then(|c| commands::run(&c, &a.common.out)).map(|_| true),
        Command::FitEval(a) => resolve_fit_eval(a).and_then(|c| commands::run(&c, &a.common.out)).map(|_| true),
        Command::Bo(a) => resolve_bo(a).and_then(|c| commands::run(&c, &a.common.out)).map(|_| true),
        Command::Reproduce(a) => reproduce(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
