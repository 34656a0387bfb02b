//! Exact Gaussian-process regression.
//!
//! Kernels are evaluated from log-space hyperparameters so that unconstrained
//! gradient steps keep every hyperparameter positive. All likelihood work goes
//! through a Cholesky factor of `K + sigma^2 I`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `s * exp(-|x - y|^2 / (2 l^2))`
    Gaussian,
    /// `s * (1 + |x - y|^2 / (2 alpha l^2))^(-alpha)`
    RationalQuadratic,
    /// `s * (x . y + sigma_dp^2)`
    DotProduct,
}

/// One named kernel hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyper {
    Amplitude,
    Lengthscale,
    Shape,
    Offset,
}

impl KernelKind {
    /// Hyperparameters the kernel actually reads, in gradient order.
    pub fn active(self) -> &'static [Hyper] {
        match self {
            KernelKind::Gaussian => &[Hyper::Amplitude, Hyper::Lengthscale],
            KernelKind::RationalQuadratic => &[Hyper::Amplitude, Hyper::Lengthscale, Hyper::Shape],
            KernelKind::DotProduct => &[Hyper::Amplitude, Hyper::Offset],
        }
    }

    /// Prior variance `k(x, x)` is constant for stationary kernels.
    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelKind::DotProduct)
    }
}

/// Kernel hyperparameters in log space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub log_s: f64,
    pub log_l: f64,
    pub log_alpha: f64,
    pub log_sigma_dp: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            log_s: 0.0,
            log_l: 0.0,
            log_alpha: 0.0,
            log_sigma_dp: 0.0,
        }
    }
}

impl KernelParams {
    pub fn new(s: f64, l: f64, alpha: f64, sigma_dp: f64) -> Result<Self> {
        for (name, v) in [("s", s), ("l", l), ("alpha", alpha), ("sigma_dp", sigma_dp)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "kernel parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(KernelParams {
            log_s: s.ln(),
            log_l: l.ln(),
            log_alpha: alpha.ln(),
            log_sigma_dp: sigma_dp.ln(),
        })
    }

    /// Gaussian-kernel shorthand with alpha and sigma_dp left at 1.
    pub fn gaussian(s: f64, l: f64) -> Result<Self> {
        Self::new(s, l, 1.0, 1.0)
    }

    pub fn s(&self) -> f64 {
        self.log_s.exp()
    }

    pub fn l(&self) -> f64 {
        self.log_l.exp()
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn sigma_dp(&self) -> f64 {
        self.log_sigma_dp.exp()
    }

    pub fn get(&self, h: Hyper) -> f64 {
        match h {
            Hyper::Amplitude => self.log_s,
            Hyper::Lengthscale => self.log_l,
            Hyper::Shape => self.log_alpha,
            Hyper::Offset => self.log_sigma_dp,
        }
    }

    pub fn set(&mut self, h: Hyper, log_value: f64) {
        match h {
            Hyper::Amplitude => self.log_s = log_value,
            Hyper::Lengthscale => self.log_l = log_value,
            Hyper::Shape => self.log_alpha = log_value,
            Hyper::Offset => self.log_sigma_dp = log_value,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.s(), self.l(), self.alpha(), self.sigma_dp()]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }

    fn natural(&self) -> Natural {
        Natural {
            s: self.s(),
            l: self.l(),
            alpha: self.alpha(),
            sigma_dp: self.sigma_dp(),
        }
    }
}

/// Observation noise variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma2: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { sigma2: 0.01 }
    }
}

impl NoiseSpec {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise variance must be finite and >= 0, got {sigma2}"
            )));
        }
        Ok(NoiseSpec { sigma2 })
    }
}

/// Hyperparameters with the exponent already taken. `w`-scaling in the
/// invariance penalty acts on these values.
#[derive(Clone, Copy, Debug)]
struct Natural {
    s: f64,
    l: f64,
    alpha: f64,
    sigma_dp: f64,
}

impl Natural {
    fn scaled(self, kind: KernelKind, w: f64) -> Self {
        let mut out = self;
        for h in kind.active() {
            match h {
                Hyper::Amplitude => out.s *= w,
                Hyper::Lengthscale => out.l *= w,
                Hyper::Shape => out.alpha *= w,
                Hyper::Offset => out.sigma_dp *= w,
            }
        }
        out
    }
}

fn sq_dist(x: &Matrix, i: usize, y: &Matrix, j: usize) -> f64 {
    (0..x.ncols()).map(|c| (x[(i, c)] - y[(j, c)]).powi(2)).sum()
}

fn dot(x: &Matrix, i: usize, y: &Matrix, j: usize) -> f64 {
    (0..x.ncols()).map(|c| x[(i, c)] * y[(j, c)]).sum()
}

fn eval(kind: KernelKind, p: &Natural, x: &Matrix, i: usize, y: &Matrix, j: usize) -> f64 {
    match kind {
        KernelKind::Gaussian => p.s * (-sq_dist(x, i, y, j) / (2.0 * p.l * p.l)).exp(),
        KernelKind::RationalQuadratic => {
            let u = 1.0 + sq_dist(x, i, y, j) / (2.0 * p.alpha * p.l * p.l);
            p.s * u.powf(-p.alpha)
        }
        KernelKind::DotProduct => p.s * (dot(x, i, y, j) + p.sigma_dp * p.sigma_dp),
    }
}

fn check_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn kernel_matrix_natural(kind: KernelKind, p: &Natural, x: &Matrix, y: &Matrix) -> Matrix {
    let symmetric = std::ptr::eq(x, y);
    let mut k = Matrix::zeros(x.nrows(), y.nrows());
    for i in 0..x.nrows() {
        let start = if symmetric { i } else { 0 };
        for j in start..y.nrows() {
            let v = eval(kind, p, x, i, y, j);
            k[(i, j)] = v;
            if symmetric {
                k[(j, i)] = v;
            }
        }
    }
    k
}

/// Cross-covariance `K[i, j] = k(x_i, y_j)`.
pub fn kernel_matrix(kind: KernelKind, params: &KernelParams, x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.ncols() != y.ncols() || x.ncols() == 0 {
        return Err(Error::mismatch("kernel_matrix", x.shape(), y.shape()));
    }
    check_finite(x, "kernel input X")?;
    check_finite(y, "kernel input Y")?;
    Ok(kernel_matrix_natural(kind, &params.natural(), x, y))
}

/// Derivatives of the Gram matrix `K(X, X)` with respect to each active
/// log-hyperparameter, in `kind.active()` order.
pub fn kernel_gradients(kind: KernelKind, params: &KernelParams, x: &Matrix) -> Vec<Matrix> {
    let p = params.natural();
    let n = x.nrows();
    kind.active()
        .iter()
        .map(|h| {
            let mut d = Matrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = match (kind, h) {
                        (_, Hyper::Amplitude) => eval(kind, &p, x, i, x, j),
                        (KernelKind::Gaussian, Hyper::Lengthscale) => {
                            let r2 = sq_dist(x, i, x, j);
                            eval(kind, &p, x, i, x, j) * r2 / (p.l * p.l)
                        }
                        (KernelKind::RationalQuadratic, Hyper::Lengthscale) => {
                            let r2 = sq_dist(x, i, x, j);
                            let u = 1.0 + r2 / (2.0 * p.alpha * p.l * p.l);
                            eval(kind, &p, x, i, x, j) * r2 / (p.l * p.l * u)
                        }
                        (KernelKind::RationalQuadratic, Hyper::Shape) => {
                            let r2 = sq_dist(x, i, x, j);
                            let u = 1.0 + r2 / (2.0 * p.alpha * p.l * p.l);
                            eval(kind, &p, x, i, x, j)
                                * (-p.alpha * u.ln() + r2 / (2.0 * p.l * p.l * u))
                        }
                        (KernelKind::DotProduct, Hyper::Offset) => {
                            2.0 * p.s * p.sigma_dp * p.sigma_dp
                        }
                        _ => unreachable!("inactive hyperparameter {h:?} for {kind:?}"),
                    };
                    d[(i, j)] = v;
                    d[(j, i)] = v;
                }
            }
            d
        })
        .collect()
}

/// Cholesky factor of `K + sigma^2 I` together with the diagonal jitter that
/// was needed to obtain it.
#[derive(Clone, Debug)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn lower(&self) -> Matrix {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    /// `A^-1 = L^-T L^-1`.
    pub fn inverse(&self) -> Matrix {
        let l_inv = lower_inverse(&self.chol.l());
        l_inv.transpose() * &l_inv
    }
}

/// Inverse of a lower-triangular matrix by 2x2 block recursion, so that most
/// of the work is matrix products:
/// `[[A, 0], [B, C]]^-1 = [[A^-1, 0], [-C^-1 B A^-1, C^-1]]`.
fn lower_inverse(l: &Matrix) -> Matrix {
    let n = l.nrows();
    if n <= 32 {
        return lower_inverse_direct(l);
    }
    let h = n / 2;
    let a_inv = lower_inverse(&l.view((0, 0), (h, h)).into_owned());
    let c_inv = lower_inverse(&l.view((h, h), (n - h, n - h)).into_owned());
    let off = -(&c_inv * l.view((h, 0), (n - h, h)) * &a_inv);
    let mut inv = Matrix::zeros(n, n);
    inv.view_mut((0, 0), (h, h)).copy_from(&a_inv);
    inv.view_mut((h, h), (n - h, n - h)).copy_from(&c_inv);
    inv.view_mut((h, 0), (n - h, h)).copy_from(&off);
    inv
}

/// Column-by-column forward substitution against unit vectors. Works on
/// contiguous columns and skips the known zeros above the diagonal.
fn lower_inverse_direct(l: &Matrix) -> Matrix {
    let n = l.nrows();
    let mut inv = Matrix::zeros(n, n);
    let mut w = vec![0.0; n];
    for j in 0..n {
        w[j..].iter_mut().for_each(|v| *v = 0.0);
        w[j] = 1.0;
        for k in j..n {
            let wk = w[k] / l[(k, k)];
            w[k] = wk;
            if wk != 0.0 {
                let col = &l.as_slice()[k * n + k + 1..(k + 1) * n];
                for (wi, lik) in w[k + 1..].iter_mut().zip(col) {
                    *wi -= lik * wk;
                }
            }
        }
        inv.as_mut_slice()[j * n + j..(j + 1) * n].copy_from_slice(&w[j..]);
    }
    inv
}

/// Factorizes a symmetric covariance, retrying with growing diagonal jitter
/// (`1e-10 .. 1e-4` times the mean diagonal) when the plain factorization fails.
fn factorize(
    cov: Matrix,
    kind: KernelKind,
    params: &KernelParams,
) -> Result<Factor> {
    let n = cov.nrows();
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(Factor { chol, jitter: 0.0 });
    }
    let scale = (cov.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * scale;
    let max_jitter = 1e-4 * scale;
    while jitter <= max_jitter * (1.0 + 1e-9) {
        let mut jittered = cov.clone();
        for i in 0..n {
            jittered[(i, i)] += jitter;
        }
        if let Some(chol) = jittered.cholesky() {
            return Ok(Factor { chol, jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        kind,
        params: *params,
        max_jitter,
    })
}

/// Kernel choice, hyperparameters, noise and constant prior mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub kind: KernelKind,
    pub params: KernelParams,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub mean_const: f64,
}

/// Log-likelihood value with gradients with respect to the active
/// log-hyperparameters (and optionally `log sigma^2` as the last entry).
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl GpModel {
    pub fn new(kind: KernelKind, params: KernelParams, noise: NoiseSpec) -> Self {
        GpModel {
            kind,
            params,
            noise,
            mean_const: 0.0,
        }
    }

    pub fn with_mean(mut self, mean_const: f64) -> Self {
        self.mean_const = mean_const;
        self
    }

    pub(crate) fn check_data(&self, x: &Matrix, y: &Vector) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::InvalidInput("need at least one training point".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::mismatch("training data", x.shape(), y.shape()));
        }
        if x.ncols() == 0 {
            return Err(Error::mismatch("training data", x.shape(), y.shape()));
        }
        check_finite(x, "training inputs")?;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("training targets"));
        }
        if !self.params.is_valid() {
            return Err(Error::InvalidInput(format!("invalid kernel parameters {:?}", self.params)));
        }
        if !(self.noise.sigma2.is_finite() && self.noise.sigma2 >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid noise {:?}", self.noise)));
        }
        Ok(())
    }

    /// `K(X, X) + sigma^2 I` evaluated at `w`-scaled hyperparameters.
    fn covariance(&self, x: &Matrix, w: f64) -> Matrix {
        let p = self.params.natural().scaled(self.kind, w);
        let mut k = kernel_matrix_natural(self.kind, &p, x, x);
        for i in 0..x.nrows() {
            k[(i, i)] += self.noise.sigma2;
        }
        k
    }

    pub(crate) fn factor(&self, x: &Matrix, w: f64) -> Result<Factor> {
        let cov = self.covariance(x, w);
        check_finite(&cov, "covariance matrix")?;
        factorize(cov, self.kind, &self.params)
    }

    pub(crate) fn residual(&self, y: &Vector) -> Vector {
        y.map(|v| v - self.mean_const)
    }

    pub fn fit(&self, x: &Matrix, y: &Vector) -> Result<GpPosterior> {
        self.check_data(x, y)?;
        let factor = self.factor(x, 1.0)?;
        let alpha_vec = factor.solve(&self.residual(y));
        Ok(GpPosterior {
            model: *self,
            train_x: x.clone(),
            factor,
            alpha_vec,
        })
    }

    pub fn log_marginal_likelihood(&self, x: &Matrix, y: &Vector) -> Result<f64> {
        self.check_data(x, y)?;
        let factor = self.factor(x, 1.0)?;
        let r = self.residual(y);
        Ok(gaussian_log_density(&factor, &r))
    }

    /// Likelihood on a soft environment: the residual is multiplied element-wise
    /// by `mask` in both quadratic-form factors while the log-determinant and
    /// normalizer keep the full covariance.
    pub fn env_log_likelihood(&self, x: &Matrix, y: &Vector, mask: &Vector) -> Result<f64> {
        self.env_log_likelihood_scaled(x, y, mask, 1.0)
    }

    /// [`Self::env_log_likelihood`] with every active exponentiated
    /// hyperparameter multiplied by `w`.
    pub fn env_log_likelihood_scaled(&self, x: &Matrix, y: &Vector, mask: &Vector, w: f64) -> Result<f64> {
        self.check_data(x, y)?;
        check_mask(mask, y.len())?;
        let factor = self.factor(x, w)?;
        let r = self.residual(y).component_mul(mask);
        Ok(gaussian_log_density(&factor, &r))
    }

    /// Log marginal likelihood and its gradient in log-hyperparameter space.
    /// With `wrt_noise` the last gradient entry is `d/d log sigma^2`.
    pub fn log_marginal_likelihood_grad(&self, x: &Matrix, y: &Vector, wrt_noise: bool) -> Result<LikelihoodGrad> {
        self.check_data(x, y)?;
        let factor = self.factor(x, 1.0)?;
        let r = self.residual(y);
        let value = gaussian_log_density(&factor, &r);
        let alpha = factor.solve(&r);
        let a_inv = factor.inverse();
        let mut grad: Vec<f64> = kernel_gradients(self.kind, &self.params, x)
            .iter()
            .map(|d| likelihood_derivative(&alpha, &a_inv, d))
            .collect();
        if wrt_noise {
            // dA/dlog(sigma^2) = sigma^2 I
            let s2 = self.noise.sigma2;
            grad.push(0.5 * s2 * (alpha.dot(&alpha) - a_inv.trace()));
        }
        Ok(LikelihoodGrad { value, grad })
    }
}

/// `1/2 a' D a - 1/2 tr(A^-1 D)` for symmetric `A^-1` and `D`.
pub(crate) fn likelihood_derivative(alpha: &Vector, a_inv: &Matrix, d: &Matrix) -> f64 {
    let fit = alpha.dot(&(d * alpha));
    let trace = a_inv.component_mul(d).sum();
    0.5 * (fit - trace)
}

pub(crate) fn check_mask(mask: &Vector, n: usize) -> Result<()> {
    if mask.len() != n {
        return Err(Error::mismatch("environment mask", (mask.len(), 1), (n, 1)));
    }
    if !mask.iter().all(|m| (0.0..=1.0).contains(m)) {
        return Err(Error::InvalidInput("mask entries must lie in [0, 1]".into()));
    }
    Ok(())
}

/// `-1/2 r' A^-1 r - 1/2 log|A| - n/2 log(2 pi)` from a factor of `A`.
pub(crate) fn gaussian_log_density(factor: &Factor, r: &Vector) -> f64 {
    let n = r.len() as f64;
    let half_quad = {
        let mut z = r.clone();
        factor.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        0.5 * z.norm_squared()
    };
    -half_quad - 0.5 * factor.log_det() - 0.5 * n * LN_2PI
}

/// Fitted posterior. Immutable after construction.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    pub model: GpModel,
    pub train_x: Matrix,
    pub factor: Factor,
    /// `(K + sigma^2 I)^-1 (y - mu)`
    pub alpha_vec: Vector,
}

/// Predictive mean and latent variance at a batch of query points.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vector,
    pub var: Vector,
    /// Number of variances that came out negative and were clamped to zero.
    pub clamped: usize,
}

impl Prediction {
    pub fn std(&self) -> Vector {
        self.var.map(f64::sqrt)
    }

    /// Standard deviation of a noisy observation `y* = f(x*) + eps`.
    pub fn observation_std(&self, noise: NoiseSpec) -> Vector {
        self.var.map(|v| (v + noise.sigma2).sqrt())
    }
}

impl GpPosterior {
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    pub fn predict(&self, xs: &Matrix) -> Result<Prediction> {
        let kind = self.model.kind;
        let params = &self.model.params;
        let k_star = kernel_matrix(kind, params, xs, &self.train_x)?;
        let mean = (&k_star * &self.alpha_vec).map(|v| v + self.model.mean_const);
        // v = L^-1 K(X, X*)
        let mut v = k_star.transpose();
        self.factor.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let p = params.natural();
        let mut clamped = 0;
        let var = Vector::from_iterator(
            xs.nrows(),
            (0..xs.nrows()).map(|i| {
                let prior = eval(kind, &p, xs, i, xs, i);
                let explained: f64 = v.column(i).norm_squared();
                let raw = prior - explained;
                if raw < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    raw
                }
            }),
        );
        Ok(Prediction { mean, var, clamped })
    }
}

/// Convenience for the free-function form of the likelihood.
pub fn log_marginal_likelihood(
    kind: KernelKind,
    params: &KernelParams,
    noise: NoiseSpec,
    x: &Matrix,
    y: &Vector,
) -> Result<f64> {
    GpModel::new(kind, *params, noise).log_marginal_likelihood(x, y)
}

pub fn fit_posterior(
    kind: KernelKind,
    params: &KernelParams,
    noise: NoiseSpec,
    x: &Matrix,
    y: &Vector,
) -> Result<GpPosterior> {
    GpModel::new(kind, *params, noise).fit(x, y)
}

pub fn env_log_likelihood(
    kind: KernelKind,
    params: &KernelParams,
    noise: NoiseSpec,
    x: &Matrix,
    y: &Vector,
    mask: &Vector,
) -> Result<f64> {
    GpModel::new(kind, *params, noise).env_log_likelihood(x, y, mask)
}
