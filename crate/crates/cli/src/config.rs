//! Resolved experiment configurations. Every field has a default, so a config
//! file only needs the keys it changes; the fully resolved form is written
//! next to each run's outputs and can be fed back in unchanged.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use dilgp::bench::{bo_surrogate, quad_bo_config, test_function_surrogate, ModelChoice, SyntheticKind, INIT_NOISE};
use dilgp::bo::{BoConfig, SurrogateConfig};
use dilgp::data::{CsvColumns, NoiseConvention, SyntheticOptions};
use dilgp::dil::{GradMode, TrainConfig, VanillaConfig};
use dilgp::gp::KernelParams;
use dilgp::quad::{SimConfig, TrajectoryKind, WindDomainSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

pub fn to_toml<T: Serialize>(cfg: &T) -> Result<String> {
    toml::to_string(cfg).context("serializing resolved config")
}

/// TOML integers are signed 64-bit.
pub fn check_seed(seed: u64) -> Result<()> {
    if seed > i64::MAX as u64 {
        bail!("seed {seed} exceeds {}", i64::MAX);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub generator: SyntheticKind,
    pub seed: u64,
    pub noise: NoiseConvention,
    pub noise_scale: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            generator: SyntheticKind::Synthetic1d,
            seed: 0,
            noise: NoiseConvention::Variance,
            noise_scale: 1.0,
        }
    }
}

impl GenerateConfig {
    pub fn options(&self) -> SyntheticOptions {
        SyntheticOptions {
            noise: self.noise,
            noise_scale: self.noise_scale,
        }
    }
}

/// Where fit-eval gets its data. Synthetic data is regenerated per seed; CSV
/// data is fixed and only the training seed varies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        generator: SyntheticKind,
        #[serde(default)]
        noise: NoiseConvention,
        #[serde(default = "one")]
        noise_scale: f64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        target: String,
        features: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain_column: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain_bins: Option<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            generator: SyntheticKind::Synthetic1d,
            noise: NoiseConvention::Variance,
            noise_scale: 1.0,
        }
    }
}

impl DatasetConfig {
    pub fn csv_columns(&self) -> Option<CsvColumns> {
        match self {
            DatasetConfig::Csv {
                target,
                features,
                domain_column,
                domain_bins,
                ..
            } => Some(CsvColumns {
                target: target.clone(),
                features: features.clone(),
                domain: domain_column.clone(),
                domain_bins: domain_bins.clone(),
            }),
            DatasetConfig::Synthetic { .. } => None,
        }
    }
}

/// Initial kernel hyperparameters in natural units; the model picks the
/// ones its kernel uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub amplitude: f64,
    pub lengthscale: f64,
    pub rq_alpha: f64,
    pub dp_offset: f64,
    pub noise: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            amplitude: 1.0,
            lengthscale: 1.0,
            rq_alpha: 1.0,
            dp_offset: 1.0,
            noise: INIT_NOISE,
        }
    }
}

impl InitConfig {
    pub fn params(&self) -> Result<KernelParams> {
        Ok(KernelParams::new(self.amplitude, self.lengthscale, self.rq_alpha, self.dp_offset)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DilSection {
    pub lambda: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub t1_outer: usize,
    pub t2_inner: usize,
    pub learn_noise: bool,
    pub grad_mode: GradMode,
}

impl Default for DilSection {
    fn default() -> Self {
        DilSection {
            lambda: 1.0,
            eta1: 1.0,
            eta2: 0.3,
            t1_outer: 100,
            t2_inner: 10,
            learn_noise: true,
            grad_mode: GradMode::AnalyticFdHybrid,
        }
    }
}

impl DilSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            t1_outer: self.t1_outer,
            t2_inner: self.t2_inner,
            eta1: self.eta1,
            eta2: self.eta2,
            lambda: self.lambda,
            seed,
            grad_mode: self.grad_mode,
            learn_noise: self.learn_noise,
            monotone: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSection {
    pub steps: usize,
    pub eta: f64,
    pub learn_noise: bool,
}

impl Default for GpSection {
    fn default() -> Self {
        GpSection {
            steps: 100,
            eta: 0.05,
            learn_noise: true,
        }
    }
}

impl GpSection {
    pub fn vanilla_config(&self) -> VanillaConfig {
        VanillaConfig {
            steps: self.steps,
            eta: self.eta,
            learn_noise: self.learn_noise,
            ..VanillaConfig::default()
        }
    }
}

/// Exactly one of `dil` / `gp` is present after [`FitEvalConfig::resolve`],
/// matching `model`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitEvalConfig {
    pub model: ModelChoice,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub init: InitConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dil: Option<DilSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gp: Option<GpSection>,
}

impl FitEvalConfig {
    pub fn resolve(mut self) -> Result<Self> {
        if self.seeds.is_empty() {
            self.seeds = vec![0];
        }
        for &s in &self.seeds {
            check_seed(s)?;
        }
        if self.model == ModelChoice::DilGp {
            if self.gp.is_some() {
                bail!("the [gp] section does not apply to model dil_gp");
            }
            self.dil.get_or_insert_with(DilSection::default);
        } else {
            if self.dil.is_some() {
                bail!("DIL settings (lambda, eta1, ...) do not apply to model {}", self.model.name());
            }
            self.gp.get_or_insert_with(GpSection::default);
        }
        self.init.params()?;
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// `sum_i (x_i - center)^2` on the unit box; optimum value 0.
    Quadratic {
        #[serde(default = "one_dim")]
        dim: usize,
        #[serde(default = "quadratic_center")]
        center: f64,
    },
    /// Mean ACE of one trajectory under the training wind; the final gains
    /// are also flown under the held-out wind.
    QuadPid {
        #[serde(default = "default_trajectory")]
        trajectory: TrajectoryKind,
        #[serde(default = "two")]
        train_flights: usize,
        #[serde(default = "five")]
        test_flights: usize,
        #[serde(default = "WindDomainSpec::domain1")]
        train_wind: WindDomainSpec,
        #[serde(default = "WindDomainSpec::domain2")]
        test_wind: WindDomainSpec,
        #[serde(default)]
        sim: SimConfig,
    },
}

fn one_dim() -> usize {
    1
}
fn quadratic_center() -> f64 {
    0.3
}
fn default_trajectory() -> TrajectoryKind {
    TrajectoryKind::Fig8
}
fn two() -> usize {
    2
}
fn five() -> usize {
    5
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig::Quadratic { dim: 1, center: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoCmdConfig {
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub bo: BoConfig,
}

impl Default for BoCmdConfig {
    fn default() -> Self {
        BoCmdConfig {
            seed: 0,
            objective: ObjectiveConfig::default(),
            bo: quad_bo_config(default_surrogate(&ObjectiveConfig::default(), true)),
        }
    }
}

/// Surrogate preset for an objective: noise-free test functions get the
/// lighter invariance penalty.
pub fn default_surrogate(objective: &ObjectiveConfig, dil: bool) -> SurrogateConfig {
    match (objective, dil) {
        (ObjectiveConfig::Quadratic { .. }, true) => test_function_surrogate(),
        _ => bo_surrogate(dil),
    }
}

impl BoCmdConfig {
    pub fn resolve(mut self) -> Result<Self> {
        check_seed(self.seed)?;
        match &self.objective {
            ObjectiveConfig::Quadratic { dim, center } => {
                if *dim == 0 || !(0.0..=1.0).contains(center) {
                    bail!("quadratic objective needs dim >= 1 and center in [0, 1]");
                }
                self.bo.f_star.get_or_insert(0.0);
            }
            ObjectiveConfig::QuadPid {
                train_flights,
                test_flights,
                train_wind,
                test_wind,
                ..
            } => {
                if *train_flights == 0 || *test_flights == 0 {
                    bail!("quad_pid needs at least one training and one test flight");
                }
                train_wind.validate()?;
                test_wind.validate()?;
            }
        }
        Ok(self)
    }
}

/// Which command a manifest belongs to, with its resolved config.
#[derive(Clone, Debug, PartialEq)]
pub enum CommandConfig {
    Generate(GenerateConfig),
    FitEval(FitEvalConfig),
    Bo(BoCmdConfig),
}

impl CommandConfig {
    pub fn name(&self) -> &'static str {
        match self {
            CommandConfig::Generate(_) => "generate",
            CommandConfig::FitEval(_) => "fit-eval",
            CommandConfig::Bo(_) => "bo",
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        match self {
            CommandConfig::Generate(c) => to_toml(c),
            CommandConfig::FitEval(c) => to_toml(c),
            CommandConfig::Bo(c) => to_toml(c),
        }
    }

    pub fn parse(command: &str, text: &str) -> Result<Self> {
        Ok(match command {
            "generate" => CommandConfig::Generate(toml::from_str(text)?),
            "fit-eval" => CommandConfig::FitEval(toml::from_str::<FitEvalConfig>(text)?.resolve()?),
            "bo" => CommandConfig::Bo(toml::from_str::<BoCmdConfig>(text)?.resolve()?),
            other => bail!("manifest names unknown command {other:?}"),
        })
    }

    pub fn seed(&self) -> u64 {
        match self {
            CommandConfig::Generate(c) => c.seed,
            CommandConfig::FitEval(c) => c.seeds[0],
            CommandConfig::Bo(c) => c.seed,
        }
    }
}
