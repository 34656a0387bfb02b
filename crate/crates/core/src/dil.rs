//! Domain-invariant learning for GPs.
//!
//! Training alternates two players on the same likelihood:
//!
//! * the adversary moves soft environment logits `q_tilde` uphill on the
//!   invariance penalty `sum_e (d/dw log p(y | x, w * theta, e) at w = 1)^2`,
//!   i.e. it looks for the two-way split of the data on which the current
//!   hyperparameters are least stationary;
//! * the learner moves the log-hyperparameters downhill on
//!   `-log p(y | x, theta) + lambda * penalty`, divided by `n` so that one
//!   learning rate behaves alike across dataset sizes.
//!
//! The adversary's step is the raw penalty gradient times `eta1`; the penalty
//! grows with `n` and with the residual scale, so `eta1` is of order one on
//! standardized data.
//!
//! `w` is one scalar multiplying every active exponentiated kernel
//! hyperparameter, so `d/dw` at `w = 1` is the sum of the gradients with
//! respect to the log-hyperparameters. Exactly two environments are supported.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{gaussian_log_density, kernel_gradients, likelihood_derivative, Factor, GpModel, KernelKind, KernelParams, Matrix, NoiseSpec, Vector};
use crate::seed;

/// Step for differences in `w` and for the forward difference of the penalty
/// with respect to the hyperparameters in hybrid mode.
const FD_STEP: f64 = 1e-5;
/// Step for central differences in `q_tilde` (oracle mode).
const FD_STEP_Q: f64 = 1e-4;
/// Step for the outer finite difference of a finite-difference penalty.
const FD_STEP_NESTED: f64 = 1e-4;
const MAX_STEP_HALVINGS: usize = 8;
/// Standard deviation of the seeded logit initialization.
pub const LOGIT_INIT_STD: f64 = 0.1;

/// Real-valued logits; `sigmoid(q_tilde)` is the soft membership in
/// environment 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainLogits {
    pub q_tilde: Vector,
}

impl DomainLogits {
    pub fn new(q_tilde: Vector) -> Self {
        DomainLogits { q_tilde }
    }

    pub fn zeros(n: usize) -> Self {
        DomainLogits::new(Vector::zeros(n))
    }

    /// i.i.d. `N(0, 0.1^2)` entries from `seed`.
    pub fn seeded(n: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, "dil/logits"));
        let normal = Normal::new(0.0, LOGIT_INIT_STD).expect("valid normal");
        DomainLogits::new(Vector::from_iterator(n, (0..n).map(|_| normal.sample(&mut rng))))
    }

    pub fn len(&self) -> usize {
        self.q_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_tilde.is_empty()
    }

    /// Swaps the roles of the two environments.
    pub fn negated(&self) -> Self {
        DomainLogits::new(-&self.q_tilde)
    }

    /// Soft membership in environment 0.
    pub fn membership(&self) -> Vector {
        env_masks(self).0
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Complementary soft masks `(sigmoid(q), 1 - sigmoid(q))`. Their sum is
/// exactly one in floating point, and negating `q` swaps them bitwise: the
/// smaller mask is always evaluated directly and the larger is its
/// complement.
pub fn env_masks(q: &DomainLogits) -> (Vector, Vector) {
    let n = q.len();
    let mut m0 = Vector::zeros(n);
    let mut m1 = Vector::zeros(n);
    for (i, &v) in q.q_tilde.iter().enumerate() {
        if v >= 0.0 {
            m1[i] = 1.0 / (1.0 + v.exp());
            m0[i] = 1.0 - m1[i];
        } else {
            m0[i] = 1.0 / (1.0 + (-v).exp());
            m1[i] = 1.0 - m0[i];
        }
    }
    (m0, m1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Analytic likelihood gradients and analytic `q` gradient; finite
    /// differences only for the penalty's dependence on the hyperparameters.
    #[default]
    AnalyticFdHybrid,
    /// Central differences everywhere. Slow; intended as an oracle.
    FullFd,
}

/// Per-environment `d/dw` gradients and their squared sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyReport {
    pub per_env_grad: [f64; 2],
    pub penalty: f64,
}

impl PenaltyReport {
    fn from_grads(per_env_grad: [f64; 2]) -> Self {
        PenaltyReport {
            per_env_grad,
            penalty: per_env_grad[0] * per_env_grad[0] + per_env_grad[1] * per_env_grad[1],
        }
    }
}

/// Everything about the likelihood at one hyperparameter setting that the
/// two players need. With `A = K + sigma^2 I` and `D = dK(w theta)/dw` at
/// `w = 1`, the environment gradient is `g_e = 1/2 a_e' D a_e - c` where
/// `a_e = A^-1 r_e`, `r_e = (y - mu) * m_e` and `c = 1/2 tr(A^-1 D)`.
#[derive(Clone, Debug)]
pub struct PenaltyCache {
    factor: Factor,
    a_inv: Matrix,
    alpha: Vector,
    residual: Vector,
    kernel_grads: Vec<Matrix>,
    d: Matrix,
    c: f64,
    sigma2: f64,
    log_likelihood: f64,
}

impl PenaltyCache {
    pub fn new(model: &GpModel, x: &Matrix, y: &Vector) -> Result<Self> {
        model.check_data(x, y)?;
        let factor = model.factor(x, 1.0)?;
        let n = x.nrows();
        let residual = model.residual(y);
        let log_likelihood = gaussian_log_density(&factor, &residual);
        let alpha = factor.solve(&residual);
        let a_inv = factor.inverse();
        let kernel_grads = kernel_gradients(model.kind, &model.params, x);
        let d = kernel_grads.iter().fold(Matrix::zeros(n, n), |acc, g| acc + g);
        let c = 0.5 * a_inv.component_mul(&d).sum();
        Ok(PenaltyCache {
            factor,
            a_inv,
            alpha,
            residual,
            kernel_grads,
            d,
            c,
            sigma2: model.noise.sigma2,
            log_likelihood,
        })
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Gradient of the log marginal likelihood in the packed layout.
    pub fn log_likelihood_grad(&self, learn_noise: bool) -> Vec<f64> {
        let mut grad: Vec<f64> = self
            .kernel_grads
            .iter()
            .map(|k| likelihood_derivative(&self.alpha, &self.a_inv, k))
            .collect();
        if learn_noise {
            grad.push(0.5 * self.sigma2 * (self.alpha.dot(&self.alpha) - self.a_inv.trace()));
        }
        grad
    }

    /// `(g_e, A^-1 r_e)` for one mask.
    fn env_grad(&self, mask: &Vector) -> (f64, Vector) {
        let a = self.factor.solve(&self.residual.component_mul(mask));
        (0.5 * a.dot(&(&self.d * &a)) - self.c, a)
    }

    pub fn report(&self, q: &DomainLogits) -> PenaltyReport {
        let (m0, m1) = env_masks(q);
        PenaltyReport::from_grads([self.env_grad(&m0).0, self.env_grad(&m1).0])
    }

    /// Analytic `d penalty / d q_tilde`.
    pub fn grad_q(&self, q: &DomainLogits) -> Vector {
        let (m0, m1) = env_masks(q);
        let (g0, a0) = self.env_grad(&m0);
        let (g1, a1) = self.env_grad(&m1);
        // d g_e / d m_e = r * (A^-1 D a_e); dm0/dq = m0 m1 = -dm1/dq
        let dg0 = self.residual.component_mul(&self.factor.solve(&(&self.d * &a0)));
        let dg1 = self.residual.component_mul(&self.factor.solve(&(&self.d * &a1)));
        let slope = m0.component_mul(&m1);
        (dg0 * (2.0 * g0) - dg1 * (2.0 * g1)).component_mul(&slope)
    }

    fn objective(&self, q: &DomainLogits, lambda: f64) -> f64 {
        let n = self.residual.len() as f64;
        if lambda == 0.0 {
            return -self.log_likelihood / n;
        }
        (-self.log_likelihood + lambda * self.report(q).penalty) / n
    }
}

fn check_logits(q: &DomainLogits, n: usize) -> Result<()> {
    if q.len() != n {
        return Err(Error::mismatch("domain logits", (q.len(), 1), (n, 1)));
    }
    if !q.q_tilde.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("domain logits"));
    }
    Ok(())
}

/// Invariance penalty of the split `q` under `model`.
pub fn irm_penalty(model: &GpModel, x: &Matrix, y: &Vector, q: &DomainLogits, mode: GradMode) -> Result<PenaltyReport> {
    check_logits(q, x.nrows())?;
    match mode {
        GradMode::AnalyticFdHybrid => Ok(PenaltyCache::new(model, x, y)?.report(q)),
        GradMode::FullFd => {
            let (m0, m1) = env_masks(q);
            let g = |mask: &Vector| -> Result<f64> {
                let plus = model.env_log_likelihood_scaled(x, y, mask, 1.0 + FD_STEP)?;
                let minus = model.env_log_likelihood_scaled(x, y, mask, 1.0 - FD_STEP)?;
                Ok((plus - minus) / (2.0 * FD_STEP))
            };
            Ok(PenaltyReport::from_grads([g(&m0)?, g(&m1)?]))
        }
    }
}

/// Gradient of the penalty with respect to `q_tilde`.
pub fn penalty_grad_q(model: &GpModel, x: &Matrix, y: &Vector, q: &DomainLogits, mode: GradMode) -> Result<Vector> {
    check_logits(q, x.nrows())?;
    match mode {
        GradMode::AnalyticFdHybrid => Ok(PenaltyCache::new(model, x, y)?.grad_q(q)),
        GradMode::FullFd => {
            let mut grad = Vector::zeros(q.len());
            let mut probe = q.clone();
            for i in 0..q.len() {
                let base = q.q_tilde[i];
                probe.q_tilde[i] = base + FD_STEP_Q;
                let plus = irm_penalty(model, x, y, &probe, mode)?.penalty;
                probe.q_tilde[i] = base - FD_STEP_Q;
                let minus = irm_penalty(model, x, y, &probe, mode)?.penalty;
                probe.q_tilde[i] = base;
                grad[i] = (plus - minus) / (2.0 * FD_STEP_Q);
            }
            Ok(grad)
        }
    }
}

fn ascend(q: &DomainLogits, grad: &Vector, eta1: f64) -> Result<DomainLogits> {
    if let Some(coordinate) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            context: "penalty gradient in q",
            coordinate,
        });
    }
    Ok(DomainLogits::new(&q.q_tilde + grad * eta1))
}

/// One gradient-ascent step of the adversary: `q <- q + eta1 * grad_q penalty`.
pub fn inner_ascent_step(
    model: &GpModel,
    x: &Matrix,
    y: &Vector,
    q: &DomainLogits,
    eta1: f64,
    mode: GradMode,
) -> Result<DomainLogits> {
    let grad = penalty_grad_q(model, x, y, q, mode)?;
    ascend(q, &grad, eta1)
}

/// Packs the trainable hyperparameters of a model into a flat vector of
/// log-values: the kernel's active hyperparameters, then `log sigma^2` when
/// the noise is learned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub kind: KernelKind,
    pub learn_noise: bool,
}

impl ParamLayout {
    pub fn new(kind: KernelKind, learn_noise: bool) -> Self {
        ParamLayout { kind, learn_noise }
    }

    pub fn len(&self) -> usize {
        self.kind.active().len() + usize::from(self.learn_noise)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, model: &GpModel) -> Vec<f64> {
        let mut v: Vec<f64> = self.kind.active().iter().map(|h| model.params.get(*h)).collect();
        if self.learn_noise {
            v.push(model.noise.sigma2.ln());
        }
        v
    }

    pub fn unpack(&self, base: &GpModel, v: &[f64]) -> GpModel {
        let mut m = *base;
        for (h, value) in self.kind.active().iter().zip(v) {
            m.params.set(*h, *value);
        }
        if self.learn_noise {
            m.noise = NoiseSpec {
                sigma2: v[v.len() - 1].exp(),
            };
        }
        m
    }
}

/// The learner's objective `(-log p(y | x, theta) + lambda * penalty) / n`.
/// Dividing by `n` keeps the learning rate meaningful across dataset sizes.
pub fn objective(
    model: &GpModel,
    x: &Matrix,
    y: &Vector,
    q: &DomainLogits,
    lambda: f64,
    mode: GradMode,
) -> Result<f64> {
    check_logits(q, x.nrows())?;
    match mode {
        GradMode::AnalyticFdHybrid => Ok(PenaltyCache::new(model, x, y)?.objective(q, lambda)),
        GradMode::FullFd => {
            let n = x.nrows() as f64;
            let nll = -model.log_marginal_likelihood(x, y)?;
            if lambda == 0.0 {
                return Ok(nll / n);
            }
            Ok((nll + lambda * irm_penalty(model, x, y, q, mode)?.penalty) / n)
        }
    }
}

fn central_diff<F>(layout: &ParamLayout, model: &GpModel, step: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&GpModel) -> Result<f64>,
{
    let base = layout.pack(model);
    let mut probe = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        probe[i] = base[i] + step;
        let plus = f(&layout.unpack(model, &probe))?;
        probe[i] = base[i] - step;
        let minus = f(&layout.unpack(model, &probe))?;
        probe[i] = base[i];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Hybrid gradient from a workspace at `model`: analytic likelihood term and
/// forward differences of the penalty from its known base value.
fn hybrid_grad(
    layout: &ParamLayout,
    model: &GpModel,
    cache: &PenaltyCache,
    x: &Matrix,
    y: &Vector,
    q: &DomainLogits,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = x.nrows() as f64;
    let mut grad: Vec<f64> = cache.log_likelihood_grad(layout.learn_noise).iter().map(|g| -g / n).collect();
    if lambda != 0.0 {
        let p0 = cache.report(q).penalty;
        let base = layout.pack(model);
        let mut probe = base.clone();
        for (i, g) in grad.iter_mut().enumerate() {
            probe[i] = base[i] + FD_STEP;
            let p1 = PenaltyCache::new(&layout.unpack(model, &probe), x, y)?.report(q).penalty;
            probe[i] = base[i];
            *g += lambda / n * (p1 - p0) / FD_STEP;
        }
    }
    Ok(grad)
}

/// Gradient of [`objective`] in the packed log-parameter space.
pub fn objective_grad(
    layout: &ParamLayout,
    model: &GpModel,
    x: &Matrix,
    y: &Vector,
    q: &DomainLogits,
    lambda: f64,
    mode: GradMode,
) -> Result<Vec<f64>> {
    check_logits(q, x.nrows())?;
    match mode {
        GradMode::AnalyticFdHybrid => {
            let cache = PenaltyCache::new(model, x, y)?;
            hybrid_grad(layout, model, &cache, x, y, q, lambda)
        }
        GradMode::FullFd => {
            let step = if lambda == 0.0 { FD_STEP } else { FD_STEP_NESTED };
            central_diff(layout, model, step, |m| objective(m, x, y, q, lambda, mode))
        }
    }
}

/// Learner update options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentOptions {
    pub lambda: f64,
    pub learn_noise: bool,
    pub mode: GradMode,
    /// Also halve the step while it fails to decrease the objective.
    pub monotone: bool,
}

/// One gradient-descent step of the learner. A step that lands on a
/// non-finite objective is retried with half the rate, up to eight times.
pub fn outer_descent_step(
    model: &GpModel,
    x: &Matrix,
    y: &Vector,
    q: &DomainLogits,
    eta2: f64,
    opts: &DescentOptions,
) -> Result<GpModel> {
    check_logits(q, x.nrows())?;
    let cache = match opts.mode {
        GradMode::AnalyticFdHybrid => Some(PenaltyCache::new(model, x, y)?),
        GradMode::FullFd => None,
    };
    descend(model, cache, x, y, q, eta2, opts).map(|(m, _)| m)
}

/// [`outer_descent_step`] that consumes the workspace at `model` (hybrid
/// mode) and returns the one at the accepted point.
fn descend(
    model: &GpModel,
    cache: Option<PenaltyCache>,
    x: &Matrix,
    y: &Vector,
    q: &DomainLogits,
    eta2: f64,
    opts: &DescentOptions,
) -> Result<(GpModel, Option<PenaltyCache>)> {
    let layout = ParamLayout::new(model.kind, opts.learn_noise);
    let grad = match &cache {
        Some(c) => hybrid_grad(&layout, model, c, x, y, q, opts.lambda)?,
        None => objective_grad(&layout, model, x, y, q, opts.lambda, opts.mode)?,
    };
    if let Some(coordinate) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            context: "objective gradient in theta",
            coordinate,
        });
    }
    if eta2 == 0.0 {
        return Ok((*model, cache));
    }
    let evaluate = |m: &GpModel| -> Result<(f64, Option<PenaltyCache>)> {
        match opts.mode {
            GradMode::AnalyticFdHybrid => {
                let c = PenaltyCache::new(m, x, y)?;
                Ok((c.objective(q, opts.lambda), Some(c)))
            }
            GradMode::FullFd => Ok((objective(m, x, y, q, opts.lambda, opts.mode)?, None)),
        }
    };
    let current = match (opts.monotone, &cache) {
        (false, _) => None,
        (true, Some(c)) => Some(c.objective(q, opts.lambda)),
        (true, None) => Some(objective(model, x, y, q, opts.lambda, opts.mode)?),
    };
    let base = layout.pack(model);
    let mut eta = eta2;
    for _ in 0..=MAX_STEP_HALVINGS {
        let cand: Vec<f64> = base.iter().zip(&grad).map(|(t, g)| t - eta * g).collect();
        let next = layout.unpack(model, &cand);
        if let Ok((v, next_cache)) = evaluate(&next) {
            let accept = v.is_finite() && current.is_none_or(|c| v <= c);
            if accept {
                return Ok((next, next_cache));
            }
        }
        eta *= 0.5;
    }
    if current.is_some() {
        // no decreasing step at any rate; stay put
        return Ok((*model, cache));
    }
    Err(Error::Diverged(format!(
        "objective non-finite after {MAX_STEP_HALVINGS} step halvings from {:?}",
        model.params
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Outer iterations (one learner step each).
    pub t1_outer: usize,
    /// Adversary steps per outer iteration.
    pub t2_inner: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub lambda: f64,
    pub seed: u64,
    #[serde(default)]
    pub grad_mode: GradMode,
    /// Learn `log sigma^2` jointly with the kernel hyperparameters.
    #[serde(default)]
    pub learn_noise: bool,
    #[serde(default)]
    pub monotone: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            t1_outer: 100,
            t2_inner: 10,
            eta1: 1.0,
            eta2: 0.01,
            lambda: 0.1,
            seed: 0,
            grad_mode: GradMode::AnalyticFdHybrid,
            learn_noise: false,
            monotone: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t1_outer == 0 {
            return Err(Error::InvalidInput("t1_outer must be >= 1".into()));
        }
        for (name, v) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    fn descent(&self) -> DescentOptions {
        DescentOptions {
            lambda: self.lambda,
            learn_noise: self.learn_noise,
            mode: self.grad_mode,
            monotone: self.monotone,
        }
    }
}

/// One outer iteration, evaluated after the adversary's steps and before the
/// learner's step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub objective: f64,
    pub penalty: f64,
    pub per_env_grad: [f64; 2],
    pub params: KernelParams,
    pub noise_sigma2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: GpModel,
    pub logits: DomainLogits,
    pub trace: TrainTrace,
}

/// Training error with whatever trace was collected before the abort.
#[derive(Debug, thiserror::Error)]
#[error("DIL-GP training failed after {} outer steps: {source}", trace.len())]
pub struct TrainFailure {
    #[source]
    pub source: Error,
    pub trace: TrainTrace,
    pub logits: DomainLogits,
}

/// Min-max training: `t1_outer` iterations, each running `t2_inner` adversary
/// ascent steps (warm-started from the previous logits) followed by one
/// learner descent step.
pub fn train_dil_gp(
    init: &GpModel,
    x: &Matrix,
    y: &Vector,
    cfg: &TrainConfig,
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let n = x.nrows();
    let mut logits = DomainLogits::seeded(n, cfg.seed);
    let mut trace = TrainTrace::default();
    let fail = |source: Error, trace: TrainTrace, logits: DomainLogits| TrainFailure { source, trace, logits };

    if let Err(e) = cfg.validate() {
        return Err(fail(e, trace, logits));
    }
    if n < 4 {
        return Err(fail(
            Error::InvalidInput(format!("DIL-GP needs at least 4 training points, got {n}")),
            trace,
            logits,
        ));
    }

    let opts = cfg.descent();
    let mut model = *init;
    let mut cache = match cfg.grad_mode {
        GradMode::AnalyticFdHybrid => match PenaltyCache::new(&model, x, y) {
            Ok(c) => Some(c),
            Err(e) => return Err(fail(e, trace, logits)),
        },
        GradMode::FullFd => None,
    };
    for step in 0..cfg.t1_outer {
        let report = match adversary(&model, cache.as_ref(), x, y, &mut logits, cfg) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, trace, logits)),
        };
        let log_likelihood = match &cache {
            Some(c) => Ok(c.log_likelihood()),
            None => model.log_marginal_likelihood(x, y),
        };
        let nll = match log_likelihood {
            Ok(v) => -v,
            Err(e) => return Err(fail(e, trace, logits)),
        };
        trace.records.push(TraceRecord {
            step,
            objective: (nll + cfg.lambda * report.penalty) / n as f64,
            penalty: report.penalty,
            per_env_grad: report.per_env_grad,
            params: model.params,
            noise_sigma2: model.noise.sigma2,
        });
        (model, cache) = match descend(&model, cache, x, y, &logits, cfg.eta2, &opts) {
            Ok(next) => next,
            Err(e) => return Err(fail(e, trace, logits)),
        };
    }
    Ok(TrainOutcome { model, logits, trace })
}

/// Runs the adversary's inner loop in place and returns the penalty at the
/// final logits. Hyperparameters are fixed during the inner loop.
fn adversary(
    model: &GpModel,
    cache: Option<&PenaltyCache>,
    x: &Matrix,
    y: &Vector,
    logits: &mut DomainLogits,
    cfg: &TrainConfig,
) -> Result<PenaltyReport> {
    match cache {
        Some(c) => {
            for _ in 0..cfg.t2_inner {
                *logits = ascend(logits, &c.grad_q(logits), cfg.eta1)?;
            }
            Ok(c.report(logits))
        }
        None => {
            for _ in 0..cfg.t2_inner {
                *logits = inner_ascent_step(model, x, y, logits, cfg.eta1, cfg.grad_mode)?;
            }
            irm_penalty(model, x, y, logits, cfg.grad_mode)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanillaConfig {
    pub steps: usize,
    pub eta: f64,
    #[serde(default)]
    pub learn_noise: bool,
    #[serde(default)]
    pub monotone: bool,
    #[serde(default)]
    pub grad_mode: GradMode,
}

impl Default for VanillaConfig {
    fn default() -> Self {
        VanillaConfig {
            steps: 100,
            eta: 0.01,
            learn_noise: false,
            monotone: false,
            grad_mode: GradMode::AnalyticFdHybrid,
        }
    }
}

/// Plain maximum-likelihood training: gradient ascent on the log marginal
/// likelihood in log-parameter space.
pub fn train_vanilla_gp(init: &GpModel, x: &Matrix, y: &Vector, cfg: &VanillaConfig) -> Result<GpModel> {
    train_vanilla_gp_traced(init, x, y, cfg).map(|(model, _)| model)
}

/// [`train_vanilla_gp`] with one trace record per step (zero penalty).
pub fn train_vanilla_gp_traced(
    init: &GpModel,
    x: &Matrix,
    y: &Vector,
    cfg: &VanillaConfig,
) -> Result<(GpModel, TrainTrace)> {
    let opts = DescentOptions {
        lambda: 0.0,
        learn_noise: cfg.learn_noise,
        mode: cfg.grad_mode,
        monotone: cfg.monotone,
    };
    // logits are never read when lambda is zero
    let q = DomainLogits::zeros(x.nrows());
    let n = x.nrows() as f64;
    let mut model = *init;
    let mut trace = TrainTrace::default();
    let mut cache = match cfg.grad_mode {
        GradMode::AnalyticFdHybrid => Some(PenaltyCache::new(&model, x, y)?),
        GradMode::FullFd => None,
    };
    for step in 0..cfg.steps {
        let ll = match &cache {
            Some(c) => c.log_likelihood(),
            None => model.log_marginal_likelihood(x, y)?,
        };
        trace.records.push(TraceRecord {
            step,
            objective: -ll / n,
            penalty: 0.0,
            per_env_grad: [0.0, 0.0],
            params: model.params,
            noise_sigma2: model.noise.sigma2,
        });
        (model, cache) = descend(&model, cache, x, y, &q, cfg.eta, &opts)?;
    }
    Ok((model, trace))
}
