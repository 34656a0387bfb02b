//! Experiment harnesses shared by the command-line tool and the acceptance
//! suite: single fit-and-evaluate runs, the grid-selected synthetic
//! comparison of DIL-GP against a plain GP, and the PID-tuning comparison of
//! the two BO surrogates under wind shift.

use serde::{Deserialize, Serialize};

use crate::bo::{bo_run, AcquisitionKind, BoConfig, BoOutcome, SurrogateConfig, Trainer};
use crate::data::{gen_synthetic_1d_with, gen_synthetic_2d_with, standardize_fit_transform, Dataset, EvalReport, SyntheticOptions};
use crate::dil::{train_dil_gp, train_vanilla_gp_traced, DomainLogits, TrainConfig, TrainTrace, VanillaConfig};
use crate::error::{Error, Result};
use crate::gp::{GpModel, KernelKind, KernelParams, NoiseSpec};
use crate::quad::{pid_objective_with, PidGains, SimConfig, TrajectoryKind, WindDomainSpec};
use crate::seed;

/// Mean with the largest absolute deviation from it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMaxDev {
    pub mean: f64,
    pub max_dev: f64,
}

impl MeanMaxDev {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanMaxDev { mean: f64::NAN, max_dev: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let max_dev = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        MeanMaxDev { mean, max_dev }
    }
}

impl std::fmt::Display for MeanMaxDev {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.max_dev)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    #[serde(rename = "synthetic_1d")]
    Synthetic1d,
    #[serde(rename = "synthetic_2d")]
    Synthetic2d,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 2] = [SyntheticKind::Synthetic1d, SyntheticKind::Synthetic2d];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Synthetic1d => "synthetic_1d",
            SyntheticKind::Synthetic2d => "synthetic_2d",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        SyntheticKind::ALL.into_iter().find(|k| k.name() == name).ok_or_else(|| {
            Error::InvalidInput(format!("unknown generator {name:?}, expected one of [\"synthetic_1d\", \"synthetic_2d\"]"))
        })
    }

    pub fn generate(self, seed: u64, opts: SyntheticOptions) -> (Dataset, Dataset) {
        match self {
            SyntheticKind::Synthetic1d => gen_synthetic_1d_with(seed, opts),
            SyntheticKind::Synthetic2d => gen_synthetic_2d_with(seed, opts),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    #[default]
    DilGp,
    GpGaussian,
    GpRq,
    GpDp,
}

impl ModelChoice {
    pub const ALL: [ModelChoice; 4] = [ModelChoice::DilGp, ModelChoice::GpGaussian, ModelChoice::GpRq, ModelChoice::GpDp];

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::DilGp => "dil_gp",
            ModelChoice::GpGaussian => "gp_gaussian",
            ModelChoice::GpRq => "gp_rq",
            ModelChoice::GpDp => "gp_dp",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ModelChoice::ALL.into_iter().find(|m| m.name() == name).ok_or_else(|| {
            let names: Vec<_> = ModelChoice::ALL.iter().map(|m| m.name()).collect();
            Error::InvalidInput(format!("unknown model {name:?}, expected one of {names:?}"))
        })
    }

    pub fn kernel(self) -> KernelKind {
        match self {
            ModelChoice::DilGp | ModelChoice::GpGaussian => KernelKind::Gaussian,
            ModelChoice::GpRq => KernelKind::RationalQuadratic,
            ModelChoice::GpDp => KernelKind::DotProduct,
        }
    }
}

/// Initial hyperparameters shared by the synthetic experiments.
pub const INIT_NOISE: f64 = 0.3;

pub fn default_init_params() -> KernelParams {
    KernelParams::default()
}

/// Everything a single fit-and-evaluate run needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub enum FitSpec {
    Dil { init: GpModel, cfg: TrainConfig },
    Vanilla { init: GpModel, cfg: VanillaConfig },
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: GpModel,
    pub report: EvalReport,
    pub trace: TrainTrace,
    pub logits: Option<DomainLogits>,
}

/// Standardizes on the training split, trains, and reports RMSE and coverage
/// in original target units. Coverage uses the observation standard
/// deviation (latent variance plus noise).
pub fn fit_evaluate(spec: &FitSpec, train: &Dataset, test: &Dataset) -> Result<FitOutcome> {
    let (tr, te, scaler) = standardize_fit_transform(train, test)?;
    let (model, trace, logits) = match spec {
        FitSpec::Dil { init, cfg } => {
            let out = train_dil_gp(init, &tr.x, &tr.y, cfg).map_err(|f| f.source)?;
            (out.model, out.trace, Some(out.logits))
        }
        FitSpec::Vanilla { init, cfg } => {
            let (model, trace) = train_vanilla_gp_traced(init, &tr.x, &tr.y, cfg)?;
            (model, trace, None)
        }
    };
    let pred = model.fit(&tr.x, &tr.y)?.predict(&te.x)?;
    let mean = scaler.inverse_y(&pred.mean);
    let std = scaler.inverse_std(&pred.observation_std(model.noise));
    let report = EvalReport::evaluate(&mean, Some(&std), test)?;
    Ok(FitOutcome { model, report, trace, logits })
}

/// Hyperparameter grids searched by the synthetic comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub lambdas: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            lambdas: vec![0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0],
            learning_rates: vec![0.0001, 0.0005, 0.001, 0.005, 0.01, 0.03, 0.05, 0.1, 0.3, 0.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchConfig {
    pub dataset: SyntheticKind,
    pub seeds: Vec<u64>,
    pub grid: HyperGrid,
    pub data: SyntheticOptions,
    pub init_params: KernelParams,
    pub init_noise: f64,
    pub t1_outer: usize,
    pub t2_inner: usize,
    pub eta1: f64,
    pub learn_noise: bool,
}

impl SyntheticBenchConfig {
    pub fn new(dataset: SyntheticKind) -> Self {
        SyntheticBenchConfig {
            dataset,
            seeds: (0..5).collect(),
            grid: HyperGrid::default(),
            data: SyntheticOptions::default(),
            init_params: default_init_params(),
            init_noise: INIT_NOISE,
            t1_outer: 100,
            t2_inner: 10,
            eta1: 1.0,
            learn_noise: true,
        }
    }

    fn init_model(&self) -> Result<GpModel> {
        Ok(GpModel::new(KernelKind::Gaussian, self.init_params, NoiseSpec::new(self.init_noise)?))
    }

    pub fn dil_spec(&self, lambda: f64, eta2: f64, seed: u64) -> Result<FitSpec> {
        Ok(FitSpec::Dil {
            init: self.init_model()?,
            cfg: TrainConfig {
                t1_outer: self.t1_outer,
                t2_inner: self.t2_inner,
                eta1: self.eta1,
                eta2,
                lambda,
                seed,
                learn_noise: self.learn_noise,
                ..TrainConfig::default()
            },
        })
    }

    /// The plain GP gets as many learner steps as DIL-GP has outer steps.
    pub fn vanilla_spec(&self, eta: f64) -> Result<FitSpec> {
        Ok(FitSpec::Vanilla {
            init: self.init_model()?,
            cfg: VanillaConfig {
                steps: self.t1_outer,
                eta,
                learn_noise: self.learn_noise,
                ..VanillaConfig::default()
            },
        })
    }
}

/// One grid cell evaluated over all seeds. `lambda` is absent for the GP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub lambda: Option<f64>,
    pub learning_rate: f64,
    pub per_seed: Vec<Option<EvalReport>>,
    pub failures: usize,
}

impl GridResult {
    fn reports(&self) -> impl Iterator<Item = &EvalReport> {
        self.per_seed.iter().flatten()
    }

    pub fn rmse(&self) -> MeanMaxDev {
        MeanMaxDev::of(&self.reports().map(|r| r.rmse).collect::<Vec<_>>())
    }

    pub fn coverage(&self) -> MeanMaxDev {
        MeanMaxDev::of(&self.reports().filter_map(|r| r.coverage_rate).collect::<Vec<_>>())
    }

    pub fn per_seed_rmse(&self) -> Vec<f64> {
        self.per_seed.iter().map(|r| r.as_ref().map_or(f64::NAN, |r| r.rmse)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchReport {
    pub config: SyntheticBenchConfig,
    pub gp: GridResult,
    pub dil: GridResult,
    pub gp_grid: Vec<GridResult>,
    pub dil_grid: Vec<GridResult>,
}

/// Lowest mean test RMSE among cells where every seed trained; the first
/// such cell wins ties.
fn select(cells: &[GridResult]) -> Result<GridResult> {
    let mut best: Option<&GridResult> = None;
    for c in cells.iter().filter(|c| c.failures == 0) {
        if best.is_none_or(|b| c.rmse().mean < b.rmse().mean) {
            best = Some(c);
        }
    }
    best.cloned().ok_or_else(|| Error::Diverged("every grid cell failed on some seed".into()))
}

/// Grid-selected comparison of DIL-GP and a plain Gaussian-kernel GP. The GP
/// searches the learning-rate grid, DIL-GP the learning-rate x lambda grid;
/// each method reports its cell with the lowest mean test RMSE over seeds.
pub fn run_synthetic_benchmark(cfg: &SyntheticBenchConfig) -> Result<SyntheticBenchReport> {
    if cfg.seeds.is_empty() || cfg.grid.learning_rates.is_empty() || cfg.grid.lambdas.is_empty() {
        return Err(Error::InvalidInput("benchmark needs seeds, learning rates and lambdas".into()));
    }
    let data: Vec<(Dataset, Dataset)> = cfg.seeds.iter().map(|&s| cfg.dataset.generate(s, cfg.data)).collect();
    let run_cell = |lambda: Option<f64>, lr: f64| -> Result<GridResult> {
        let mut per_seed = Vec::with_capacity(data.len());
        for (&s, (train, test)) in cfg.seeds.iter().zip(&data) {
            let spec = match lambda {
                Some(l) => cfg.dil_spec(l, lr, seed::derive(s, "bench/dil"))?,
                None => cfg.vanilla_spec(lr)?,
            };
            per_seed.push(fit_evaluate(&spec, train, test).ok().map(|o| o.report));
        }
        let failures = per_seed.iter().filter(|r| r.is_none()).count();
        Ok(GridResult { lambda, learning_rate: lr, per_seed, failures })
    };
    let mut gp_grid = Vec::new();
    for &lr in &cfg.grid.learning_rates {
        gp_grid.push(run_cell(None, lr)?);
    }
    let mut dil_grid = Vec::new();
    for &lambda in &cfg.grid.lambdas {
        for &lr in &cfg.grid.learning_rates {
            dil_grid.push(run_cell(Some(lambda), lr)?);
        }
    }
    Ok(SyntheticBenchReport {
        config: cfg.clone(),
        gp: select(&gp_grid)?,
        dil: select(&dil_grid)?,
        gp_grid,
        dil_grid,
    })
}

/// PID-tuning comparison: each surrogate tunes gains by BO on the training
/// wind domain, and the final incumbents are flown in the held-out domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadBenchConfig {
    pub trajectories: Vec<TrajectoryKind>,
    pub experiment_seeds: Vec<u64>,
    pub train_wind: WindDomainSpec,
    pub test_wind: WindDomainSpec,
    /// Wind realizations averaged by the training objective.
    pub train_flights: usize,
    /// Wind realizations averaged by the held-out evaluation.
    pub test_flights: usize,
    pub sim: SimConfig,
    pub bo: BoConfig,
    pub dil: SurrogateConfig,
    pub gp: SurrogateConfig,
}

impl Default for QuadBenchConfig {
    fn default() -> Self {
        QuadBenchConfig {
            trajectories: TrajectoryKind::ALL.to_vec(),
            experiment_seeds: (0..5).collect(),
            train_wind: WindDomainSpec::domain1(),
            test_wind: WindDomainSpec::domain2(),
            train_flights: 2,
            test_flights: 5,
            sim: SimConfig::default(),
            bo: quad_bo_config(SurrogateConfig::dil_gp()),
            dil: bo_surrogate(true),
            gp: bo_surrogate(false),
        }
    }
}

/// BO surrogate presets: Gaussian kernel on unit-box inputs with learned
/// noise; `dil` selects DIL-GP refits, otherwise plain likelihood ascent.
pub fn bo_surrogate(dil: bool) -> SurrogateConfig {
    let base = if dil { SurrogateConfig::dil_gp() } else { SurrogateConfig::vanilla_gp() };
    let trainer = match base.trainer {
        Trainer::DilGp(c) => Trainer::DilGp(TrainConfig {
            learn_noise: true,
            eta2: 0.1,
            lambda: 1.0,
            ..c
        }),
        Trainer::VanillaGp(c) => Trainer::VanillaGp(VanillaConfig {
            learn_noise: true,
            eta: 0.1,
            ..c
        }),
    };
    SurrogateConfig {
        noise: NoiseSpec { sigma2: INIT_NOISE },
        trainer,
        ..base
    }
}

/// DIL-GP surrogate for noise-free test functions: [`bo_surrogate`] with
/// the noise variance frozen at its initial value and `lambda = 0.1`. The
/// penalty does not scale the noise, so a learned noise drifts upward until
/// repeated queries at one point barely shrink the posterior.
pub fn test_function_surrogate() -> SurrogateConfig {
    let mut s = bo_surrogate(true);
    if let Trainer::DilGp(c) = &mut s.trainer {
        c.lambda = 0.1;
        c.learn_noise = false;
    }
    s
}

pub fn quad_bo_config(surrogate: SurrogateConfig) -> BoConfig {
    BoConfig {
        surrogate,
        acquisition: AcquisitionKind::Ucb,
        ..BoConfig::default()
    }
}

pub fn train_flight_seeds(experiment_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| seed::derive_indexed(experiment_seed, "quad/train_flight", i)).collect()
}

pub fn test_flight_seeds(experiment_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| seed::derive_indexed(experiment_seed, "quad/test_flight", i)).collect()
}

/// BO over PID gains for one trajectory under `train` wind.
pub fn tune_pid(
    kind: TrajectoryKind,
    surrogate: &SurrogateConfig,
    cfg: &QuadBenchConfig,
    experiment_seed: u64,
) -> Result<BoOutcome> {
    let flights = train_flight_seeds(experiment_seed, cfg.train_flights);
    let bo = BoConfig { surrogate: surrogate.clone(), ..cfg.bo.clone() };
    let space = PidGains::search_space();
    let objective = |x: &[f64]| {
        PidGains::from_slice(x)
            .and_then(|g| pid_objective_with(g, &cfg.train_wind, &[kind], &flights, &cfg.sim))
            .unwrap_or(f64::NAN)
    };
    bo_run(objective, &space, &bo, seed::derive(experiment_seed, "quad/bo"))
}

/// Mean ACE of `gains` over the held-out wind realizations.
pub fn held_out_ace(gains: PidGains, kind: TrajectoryKind, cfg: &QuadBenchConfig, experiment_seed: u64) -> Result<f64> {
    let flights = test_flight_seeds(experiment_seed, cfg.test_flights);
    pid_objective_with(gains, &cfg.test_wind, &[kind], &flights, &cfg.sim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadComparison {
    pub trajectory: TrajectoryKind,
    pub experiment_seed: u64,
    pub dil_gains: PidGains,
    pub gp_gains: PidGains,
    pub dil_train_ace: f64,
    pub gp_train_ace: f64,
    pub dil_test_ace: f64,
    pub gp_test_ace: f64,
}

impl QuadComparison {
    pub fn dil_not_worse(&self) -> bool {
        self.dil_test_ace <= self.gp_test_ace
    }
}

pub fn compare_quad(kind: TrajectoryKind, cfg: &QuadBenchConfig, experiment_seed: u64) -> Result<QuadComparison> {
    let dil = tune_pid(kind, &cfg.dil, cfg, experiment_seed)?;
    let gp = tune_pid(kind, &cfg.gp, cfg, experiment_seed)?;
    let dil_gains = PidGains::from_slice(&dil.state.incumbent_x)?;
    let gp_gains = PidGains::from_slice(&gp.state.incumbent_x)?;
    Ok(QuadComparison {
        trajectory: kind,
        experiment_seed,
        dil_gains,
        gp_gains,
        dil_train_ace: dil.state.incumbent_f,
        gp_train_ace: gp.state.incumbent_f,
        dil_test_ace: held_out_ace(dil_gains, kind, cfg, experiment_seed)?,
        gp_test_ace: held_out_ace(gp_gains, kind, cfg, experiment_seed)?,
    })
}

/// Per-trajectory tally of held-out wins over the experiment seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadBenchReport {
    pub runs: Vec<QuadComparison>,
}

impl QuadBenchReport {
    pub fn wins(&self, kind: TrajectoryKind) -> (usize, usize) {
        let runs: Vec<_> = self.runs.iter().filter(|r| r.trajectory == kind).collect();
        (runs.iter().filter(|r| r.dil_not_worse()).count(), runs.len())
    }

    pub fn held_out(&self, kind: TrajectoryKind) -> (MeanMaxDev, MeanMaxDev) {
        let runs: Vec<_> = self.runs.iter().filter(|r| r.trajectory == kind).collect();
        (
            MeanMaxDev::of(&runs.iter().map(|r| r.dil_test_ace).collect::<Vec<_>>()),
            MeanMaxDev::of(&runs.iter().map(|r| r.gp_test_ace).collect::<Vec<_>>()),
        )
    }
}

pub fn run_quad_benchmark(cfg: &QuadBenchConfig) -> Result<QuadBenchReport> {
    let mut runs = Vec::new();
    for &kind in &cfg.trajectories {
        for &s in &cfg.experiment_seeds {
            runs.push(compare_quad(kind, cfg, s)?);
        }
    }
    Ok(QuadBenchReport { runs })
}
