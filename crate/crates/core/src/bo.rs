//! Bayesian optimization (minimization) with either a DIL-GP or a plain GP
//! surrogate, plus the information-gain and cumulative-regret diagnostics of
//! GP-UCB style analyses.
//!
//! Inputs are mapped to the unit box through the fixed search-space bounds
//! and the observed values are standardized at every step before the
//! surrogate is trained. Acquisitions are minimized over a seeded batch of
//! candidates, so the whole loop is deterministic given its seed.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::dil::{train_dil_gp, train_vanilla_gp, TrainConfig, VanillaConfig};
use crate::error::{Error, Result};
use crate::gp::{GpModel, GpPosterior, KernelKind, KernelParams, Matrix, NoiseSpec, Vector};
use crate::seed;

/// Axis-aligned box `lower <= x <= upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::mismatch("search space", (lower.len(), 1), (upper.len(), 1)));
        }
        let ok = lower.iter().zip(&upper).all(|(l, u)| l.is_finite() && u.is_finite() && l < u);
        if !ok {
            return Err(Error::InvalidInput("search space needs finite lower < upper".into()));
        }
        Ok(SearchSpace { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        SearchSpace {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && (0..self.dim()).all(|j| x[j] >= self.lower[j] && x[j] <= self.upper[j])
    }

    fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|j| (x[j] - self.lower[j]) / (self.upper[j] - self.lower[j]))
            .collect()
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.lower[j] + u[j] * (self.upper[j] - self.lower[j]))
            .collect()
    }

    fn sample(&self, rng: &mut seed::Rng) -> Vec<f64> {
        let u: Vec<f64> = (0..self.dim()).map(|_| rng.random::<f64>()).collect();
        self.from_unit(&u)
    }

    /// Unit-box coordinates of a batch of points, one per row.
    fn unit_matrix(&self, xs: &[Vec<f64>]) -> Matrix {
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| self.to_unit(x)).collect();
        Matrix::from_fn(rows.len(), self.dim(), |i, j| rows[i][j])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    #[default]
    Ucb,
    Ei,
}

/// Lower confidence bound `mean - sqrt(beta) * std`; smaller is better.
pub fn acquisition_ucb(mean: f64, std: f64, beta: f64) -> f64 {
    mean - beta.sqrt() * std
}

/// Negated expected improvement below `best`; smaller is better.
pub fn acquisition_ei(mean: f64, std: f64, best: f64) -> f64 {
    let gap = best - mean;
    if std <= 0.0 {
        return -gap.max(0.0);
    }
    let z = gap / std;
    let n = StdNormal::standard();
    -(gap * n.cdf(z) + std * n.pdf(z))
}

/// `B + sigma * sqrt(2 (gamma_prev + 1 + ln(4 / delta)))`. `delta` may be
/// anywhere in `(0, 4)`, where the logarithm stays positive; the confidence
/// reading needs `delta < 1`.
pub fn beta_schedule(b: f64, sigma: f64, gamma_prev: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 4.0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0, 4), got {delta}")));
    }
    if !(gamma_prev >= 0.0) {
        return Err(Error::InvalidInput(format!("information gain must be >= 0, got {gamma_prev}")));
    }
    Ok(b + sigma * (2.0 * (gamma_prev + 1.0 + (4.0 / delta).ln())).sqrt())
}

/// Information gained by one observation with pre-query predictive std
/// `sigma_pred`: `1/2 ln(1 + sigma_pred^2 / sigma2_noise)`.
pub fn information_gain_step(sigma2_noise: f64, sigma_pred: f64) -> f64 {
    0.5 * (sigma_pred * sigma_pred / sigma2_noise).ln_1p()
}

/// `C1 = 8 / ln(1 + 1 / sigma^2)`.
pub fn regret_constant(sigma2_noise: f64) -> f64 {
    8.0 / (1.0 / sigma2_noise).ln_1p()
}

/// `beta_T * sqrt(C1 * T * gamma_T)`.
pub fn regret_bound(beta_t: f64, gamma_t: f64, t: usize, sigma2_noise: f64) -> f64 {
    beta_t * (regret_constant(sigma2_noise) * t as f64 * gamma_t).sqrt()
}

/// How the surrogate's hyperparameters are refit at every BO step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Trainer {
    DilGp(TrainConfig),
    /// `steps = 0` freezes the initial hyperparameters.
    VanillaGp(VanillaConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub kind: KernelKind,
    pub init_params: KernelParams,
    pub noise: NoiseSpec,
    pub trainer: Trainer,
}

impl SurrogateConfig {
    /// Gaussian kernel with reduced per-step DIL budgets (30 outer, 5 inner).
    pub fn dil_gp() -> Self {
        SurrogateConfig {
            kind: KernelKind::Gaussian,
            init_params: KernelParams::default(),
            noise: NoiseSpec::default(),
            trainer: Trainer::DilGp(TrainConfig {
                t1_outer: 30,
                t2_inner: 5,
                ..TrainConfig::default()
            }),
        }
    }

    pub fn vanilla_gp() -> Self {
        SurrogateConfig {
            trainer: Trainer::VanillaGp(VanillaConfig {
                steps: 30,
                ..VanillaConfig::default()
            }),
            ..SurrogateConfig::dil_gp()
        }
    }

    /// Plain GP with the initial hyperparameters kept fixed.
    pub fn frozen(kind: KernelKind, params: KernelParams, noise: NoiseSpec) -> Self {
        SurrogateConfig {
            kind,
            init_params: params,
            noise,
            trainer: Trainer::VanillaGp(VanillaConfig {
                steps: 0,
                ..VanillaConfig::default()
            }),
        }
    }

    fn init_model(&self) -> GpModel {
        GpModel::new(self.kind, self.init_params, self.noise)
    }
}

/// Anything that maps a batch of points (one per row, original coordinates)
/// to predictive means and latent standard deviations.
pub trait Predictor {
    fn predict(&self, xs: &[Vec<f64>]) -> Result<(Vector, Vector)>;
}

impl<F> Predictor for F
where
    F: Fn(&[Vec<f64>]) -> Result<(Vector, Vector)>,
{
    fn predict(&self, xs: &[Vec<f64>]) -> Result<(Vector, Vector)> {
        self(xs)
    }
}

/// A fitted surrogate over the search space. Predictions are in the units of
/// the objective; [`Surrogate::latent_std`] is in standardized units, the
/// scale on which the GP noise variance is defined.
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub posterior: GpPosterior,
    pub space: SearchSpace,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Surrogate {
    pub fn model(&self) -> &GpModel {
        &self.posterior.model
    }

    pub fn latent_std(&self, xs: &[Vec<f64>]) -> Result<Vector> {
        Ok(self.posterior.predict(&self.space.unit_matrix(xs))?.std())
    }
}

impl Predictor for Surrogate {
    fn predict(&self, xs: &[Vec<f64>]) -> Result<(Vector, Vector)> {
        let p = self.posterior.predict(&self.space.unit_matrix(xs))?;
        let mean = p.mean.map(|m| m * self.y_std + self.y_mean);
        Ok((mean, p.std() * self.y_std))
    }
}

/// Trains the configured surrogate on `(xs, fs)`. `train_seed` seeds the
/// DIL logits. Training that fails falls back to the initial
/// hyperparameters; the returned flag reports whether that happened.
pub fn fit_surrogate(
    cfg: &SurrogateConfig,
    space: &SearchSpace,
    xs: &[Vec<f64>],
    fs: &[f64],
    train_seed: u64,
) -> Result<(Surrogate, bool)> {
    let n = fs.len();
    if n == 0 || xs.len() != n {
        return Err(Error::mismatch("surrogate data", (xs.len(), space.dim()), (n, 1)));
    }
    let y_mean = fs.iter().sum::<f64>() / n as f64;
    let var = fs.iter().map(|f| (f - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_std = if var > 0.0 && var.is_finite() { var.sqrt() } else { 1.0 };
    let x = space.unit_matrix(xs);
    let y = Vector::from_iterator(n, fs.iter().map(|f| (f - y_mean) / y_std));
    let init = cfg.init_model();
    let trained = match cfg.trainer {
        // the adversary needs two non-trivial soft environments
        Trainer::DilGp(_) if n < 4 => Ok(init),
        Trainer::DilGp(tc) => train_dil_gp(&init, &x, &y, &TrainConfig { seed: train_seed, ..tc })
            .map(|o| o.model)
            .map_err(|f| f.source),
        Trainer::VanillaGp(vc) => train_vanilla_gp(&init, &x, &y, &vc),
    };
    let (model, fell_back) = match trained {
        Ok(m) => (m, false),
        Err(_) => (init, true),
    };
    let (posterior, fell_back) = match model.fit(&x, &y) {
        Ok(p) => (p, fell_back),
        Err(_) if !fell_back => (init.fit(&x, &y)?, true),
        Err(e) => return Err(e),
    };
    Ok((
        Surrogate {
            posterior,
            space: space.clone(),
            y_mean,
            y_std,
        },
        fell_back,
    ))
}

/// Acquisition evaluated by [`propose_next`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Acquisition {
    Ucb { beta: f64 },
    Ei { best: f64 },
}

impl Acquisition {
    pub fn score(&self, mean: f64, std: f64) -> f64 {
        match *self {
            Acquisition::Ucb { beta } => acquisition_ucb(mean, std, beta),
            Acquisition::Ei { best } => acquisition_ei(mean, std, best),
        }
    }
}

/// Sizes of the random candidate batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateBatch {
    pub uniform: usize,
    pub local: usize,
}

impl Default for CandidateBatch {
    fn default() -> Self {
        CandidateBatch {
            uniform: 1024,
            local: 64,
        }
    }
}

/// Relative perturbation scale of local candidates around the incumbent.
const LOCAL_STD_FRACTION: f64 = 0.05;

/// Uniform candidates followed by clipped Gaussian perturbations of the
/// incumbent.
pub fn candidates(space: &SearchSpace, incumbent: Option<&[f64]>, batch: CandidateBatch, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..batch.uniform).map(|_| space.sample(rng)).collect();
    if let Some(inc) = incumbent {
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        for _ in 0..batch.local {
            let x = (0..space.dim())
                .map(|j| {
                    let width = space.upper[j] - space.lower[j];
                    let v = inc[j] + LOCAL_STD_FRACTION * width * unit.sample(rng);
                    v.clamp(space.lower[j], space.upper[j])
                })
                .collect();
            out.push(x);
        }
    }
    out
}

/// Index of the smallest score; the first one wins ties and NaN never wins.
pub fn argmin_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if s >= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i).or(if scores.is_empty() { None } else { Some(0) })
}

/// Minimizer of the acquisition over a fresh candidate batch.
pub fn propose_next<P: Predictor + ?Sized>(
    surrogate: &P,
    space: &SearchSpace,
    acq: Acquisition,
    incumbent: Option<&[f64]>,
    batch: CandidateBatch,
    rng: &mut seed::Rng,
) -> Result<Vec<f64>> {
    let cands = candidates(space, incumbent, batch, rng);
    if cands.is_empty() {
        return Err(Error::InvalidInput("empty candidate batch".into()));
    }
    let (mean, std) = surrogate.predict(&cands)?;
    let scores: Vec<f64> = (0..cands.len()).map(|i| acq.score(mean[i], std[i])).collect();
    let best = argmin_first(&scores).expect("nonempty");
    Ok(cands.into_iter().nth(best).expect("index in range"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub surrogate: SurrogateConfig,
    pub acquisition: AcquisitionKind,
    pub t_bo: usize,
    pub n_init: usize,
    /// Confidence parameter of the exploration schedule.
    pub delta: f64,
    #[serde(default)]
    pub candidates: CandidateBatch,
    /// Known optimal value; enables the cumulative-regret diagnostic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_star: Option<f64>,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            surrogate: SurrogateConfig::dil_gp(),
            acquisition: AcquisitionKind::Ucb,
            t_bo: 100,
            n_init: 5,
            delta: 0.1,
            candidates: CandidateBatch::default(),
            f_star: None,
        }
    }
}

/// Queried points and the running incumbent. Only proposed (non-initial)
/// points contribute to `sigma_history`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoState {
    pub queried_x: Vec<Vec<f64>>,
    pub queried_f: Vec<f64>,
    pub incumbent_x: Vec<f64>,
    pub incumbent_f: f64,
    /// Pre-query latent std `sigma_{t-1}(x_t)` per proposal, standardized units.
    pub sigma_history: Vec<f64>,
    /// Per proposal: noise variance of the surrogate that produced it.
    pub noise_history: Vec<f64>,
    pub failed_evaluations: usize,
    pub refit_fallbacks: usize,
    pub seed: u64,
}

impl BoState {
    fn push(&mut self, x: Vec<f64>, f: f64) {
        if self.queried_f.is_empty() || f < self.incumbent_f {
            self.incumbent_x = x.clone();
            self.incumbent_f = f;
        }
        self.queried_x.push(x);
        self.queried_f.push(f);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretDiagnostics {
    pub beta: Vec<f64>,
    /// Cumulative information gain after each proposal.
    pub info_gain: Vec<f64>,
    pub regret_bound: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cum_regret: Option<Vec<f64>>,
}

impl RegretDiagnostics {
    /// True when every observed cumulative regret is at most its bound.
    pub fn regret_within_bound(&self) -> Option<bool> {
        let cum = self.cum_regret.as_ref()?;
        Some(cum.iter().zip(&self.regret_bound).all(|(r, b)| r <= b))
    }
}

/// One line of the BO trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    pub step: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub incumbent_x: Vec<f64>,
    pub incumbent_f: f64,
    pub sigma_prev: f64,
    pub beta: f64,
    pub info_gain: f64,
    pub regret_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cum_regret: Option<f64>,
    pub failed_attempts: usize,
    pub surrogate_params: KernelParams,
    pub surrogate_noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoOutcome {
    pub state: BoState,
    pub diagnostics: RegretDiagnostics,
    pub trace: Vec<BoRecord>,
}

impl BoOutcome {
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Runs `n_init` uniform initial queries followed by `t_bo` surrogate-guided
/// proposals. A non-finite evaluation is retried once at a fresh point; a
/// second consecutive failure aborts with [`Error::ObjectiveFailed`].
pub fn bo_run<F>(objective: F, space: &SearchSpace, cfg: &BoConfig, seed: u64) -> Result<BoOutcome>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut objective = objective;
    if cfg.t_bo == 0 || cfg.n_init == 0 {
        return Err(Error::InvalidInput("t_bo and n_init must be >= 1".into()));
    }
    beta_schedule(0.0, 0.0, 0.0, cfg.delta)?;
    let mut state = BoState {
        queried_x: Vec::new(),
        queried_f: Vec::new(),
        incumbent_x: Vec::new(),
        incumbent_f: f64::INFINITY,
        sigma_history: Vec::new(),
        noise_history: Vec::new(),
        failed_evaluations: 0,
        refit_fallbacks: 0,
        seed,
    };
    let mut init_rng = seed::rng_for(seed, "bo/init");
    for i in 0..cfg.n_init {
        let mut attempt = 0;
        loop {
            let x = space.sample(&mut init_rng);
            let f = objective(&x);
            if f.is_finite() {
                state.push(x, f);
                break;
            }
            state.failed_evaluations += 1;
            attempt += 1;
            if attempt == 2 {
                return Err(Error::ObjectiveFailed { step: i });
            }
        }
    }

    let mut diag = RegretDiagnostics {
        cum_regret: cfg.f_star.map(|_| Vec::new()),
        ..Default::default()
    };
    let mut trace = Vec::with_capacity(cfg.t_bo);
    let mut gamma = 0.0;
    let mut cum_regret = 0.0;
    let mut prop_rng = seed::rng_for(seed, "bo/candidates");
    for t in 1..=cfg.t_bo {
        let train_seed = seed::derive_indexed(seed, "bo/refit", t as u64);
        let (surrogate, fell_back) = fit_surrogate(&cfg.surrogate, space, &state.queried_x, &state.queried_f, train_seed)?;
        state.refit_fallbacks += usize::from(fell_back);
        let sigma2 = surrogate.model().noise.sigma2;
        let b = state.queried_f.iter().fold(0.0f64, |m, f| m.max(f.abs()));
        let beta = beta_schedule(b, sigma2.sqrt(), gamma, cfg.delta)?;
        let acq = match cfg.acquisition {
            AcquisitionKind::Ucb => Acquisition::Ucb { beta },
            AcquisitionKind::Ei => Acquisition::Ei { best: state.incumbent_f },
        };

        let mut failed_attempts = 0;
        let (x, f) = loop {
            let x = propose_next(&surrogate, space, acq, Some(&state.incumbent_x), cfg.candidates, &mut prop_rng)?;
            let f = objective(&x);
            if f.is_finite() {
                break (x, f);
            }
            state.failed_evaluations += 1;
            failed_attempts += 1;
            if failed_attempts == 2 {
                return Err(Error::ObjectiveFailed { step: t });
            }
        };
        let sigma_prev = surrogate.latent_std(std::slice::from_ref(&x))?[0];
        gamma += information_gain_step(sigma2, sigma_prev);
        let bound = regret_bound(beta, gamma, t, sigma2);
        state.sigma_history.push(sigma_prev);
        state.noise_history.push(sigma2);
        state.push(x.clone(), f);
        diag.beta.push(beta);
        diag.info_gain.push(gamma);
        diag.regret_bound.push(bound);
        let regret = cfg.f_star.map(|fs| {
            cum_regret += f - fs;
            cum_regret
        });
        if let (Some(v), Some(r)) = (diag.cum_regret.as_mut(), regret) {
            v.push(r);
        }
        trace.push(BoRecord {
            step: t,
            x,
            f,
            incumbent_x: state.incumbent_x.clone(),
            incumbent_f: state.incumbent_f,
            sigma_prev,
            beta,
            info_gain: gamma,
            regret_bound: bound,
            cum_regret: regret,
            failed_attempts,
            surrogate_params: surrogate.model().params,
            surrogate_noise: sigma2,
        });
    }
    Ok(BoOutcome {
        state,
        diagnostics: diag,
        trace,
    })
}

/// Final summary of a run, in objective units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoSummary {
    pub incumbent_x: Vec<f64>,
    pub incumbent_f: f64,
    pub evaluations: usize,
    pub failed_evaluations: usize,
    pub refit_fallbacks: usize,
    pub final_info_gain: f64,
    pub final_regret_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_cum_regret: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regret_within_bound: Option<bool>,
}

impl BoOutcome {
    pub fn summary(&self) -> BoSummary {
        BoSummary {
            incumbent_x: self.state.incumbent_x.clone(),
            incumbent_f: self.state.incumbent_f,
            evaluations: self.state.queried_f.len(),
            failed_evaluations: self.state.failed_evaluations,
            refit_fallbacks: self.state.refit_fallbacks,
            final_info_gain: self.diagnostics.info_gain.last().copied().unwrap_or(0.0),
            final_regret_bound: self.diagnostics.regret_bound.last().copied().unwrap_or(0.0),
            final_cum_regret: self.diagnostics.cum_regret.as_ref().and_then(|c| c.last().copied()),
            regret_within_bound: self.diagnostics.regret_within_bound(),
        }
    }
}
