//! Point-mass quadrotor tracking testbed for PID gain tuning.
//!
//! The vehicle is a unit mass with direct per-axis acceleration commands and
//! gravity already compensated. A PID law with gains shared across the three
//! axes tracks one of four reference trajectories while a colored wind
//! process pushes on the body. The tracking cost is the mean squared
//! position error (ACE) over the whole flight.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bo::SearchSpace;
use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::seed;

pub const GAIN_UPPER: f64 = 5.0;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Gains of the position PID, shared by the x, y and z loops.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Result<Self> {
        let g = PidGains { kp, ki, kd };
        if !g.to_array().iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidInput(format!("PID gains must be finite and >= 0, got {g:?}")));
        }
        Ok(g)
    }

    /// Reads `[kp, ki, kd]`.
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        match x {
            [kp, ki, kd] => PidGains::new(*kp, *ki, *kd),
            _ => Err(Error::mismatch("PID gains", (x.len(), 1), (3, 1))),
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.kp, self.ki, self.kd]
    }

    /// The tuning box `[0, GAIN_UPPER]^3`.
    pub fn search_space() -> SearchSpace {
        SearchSpace::new(vec![0.0; 3], vec![GAIN_UPPER; 3]).expect("static bounds")
    }
}

/// Wind statistics of one flight domain. Both horizontal components share
/// `mean_h` and `var_h`; the vertical component uses `mean_v` and `var_v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindDomainSpec {
    pub mean_h: f64,
    pub mean_v: f64,
    pub var_h: f64,
    pub var_v: f64,
    pub correlation_time: f64,
}

impl WindDomainSpec {
    /// Gusty, zero-mean training domain.
    pub fn domain1() -> Self {
        WindDomainSpec {
            mean_h: 0.0,
            mean_v: 0.0,
            var_h: 5.0,
            var_v: 2.5,
            correlation_time: 0.5,
        }
    }

    /// Steadier held-out domain with a sustained mean push.
    pub fn domain2() -> Self {
        WindDomainSpec {
            mean_h: 3.0,
            mean_v: 1.0,
            var_h: 2.0,
            var_v: 1.0,
            correlation_time: 2.0,
        }
    }

    pub fn calm() -> Self {
        WindDomainSpec {
            mean_h: 0.0,
            mean_v: 0.0,
            var_h: 0.0,
            var_v: 0.0,
            correlation_time: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mean_h, self.mean_v, self.var_h, self.var_v, self.correlation_time]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.var_h < 0.0 || self.var_v < 0.0 || self.correlation_time <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "wind spec needs finite fields, variances >= 0 and correlation time > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Hover,
    Fig8,
    SinForward,
    SpiralUp,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 4] = [
        TrajectoryKind::Hover,
        TrajectoryKind::Fig8,
        TrajectoryKind::SinForward,
        TrajectoryKind::SpiralUp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Hover => "hover",
            TrajectoryKind::Fig8 => "fig8",
            TrajectoryKind::SinForward => "sin_forward",
            TrajectoryKind::SpiralUp => "spiral_up",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        TrajectoryKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| {
                let names: Vec<_> = TrajectoryKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidInput(format!("unknown trajectory {name:?}, expected one of {names:?}"))
            })
    }
}

pub const DURATION: f64 = 20.0;
const AMPLITUDE: f64 = 1.0;
const OMEGA: f64 = 2.0 * std::f64::consts::PI / 10.0;
const FORWARD_SPEED: f64 = 0.2;
const CLIMB_RATE: f64 = 0.05;

/// Desired position at time `t` in `[0, DURATION]`.
pub fn reference_trajectory(kind: TrajectoryKind, t: f64) -> Result<[f64; 3]> {
    if !(0.0..=DURATION).contains(&t) {
        return Err(Error::InvalidInput(format!("time {t} outside [0, {DURATION}]")));
    }
    Ok(reference_at(kind, t))
}

fn reference_at(kind: TrajectoryKind, t: f64) -> [f64; 3] {
    let (s, c) = (OMEGA * t).sin_cos();
    match kind {
        TrajectoryKind::Hover => [0.0, 0.0, 1.0],
        TrajectoryKind::Fig8 => [AMPLITUDE * s, AMPLITUDE * s * c, 1.0],
        TrajectoryKind::SinForward => [FORWARD_SPEED * t, AMPLITUDE * s, 1.0],
        TrajectoryKind::SpiralUp => [AMPLITUDE * c, AMPLITUDE * s, 0.5 + CLIMB_RATE * t],
    }
}

/// One wind sample: two horizontal components and the vertical one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindSample {
    pub h: [f64; 2],
    pub v: f64,
}

impl WindSample {
    fn as_array(self) -> [f64; 3] {
        [self.h[0], self.h[1], self.v]
    }
}

/// Per-axis first-order Gauss-Markov wind driven by unit-variance uniform
/// noise. The process starts at the domain mean.
pub fn dryden_wind(spec: &WindDomainSpec, seed: u64, dt: f64, n_steps: usize) -> Result<Vec<WindSample>> {
    spec.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("wind time step must be > 0, got {dt}")));
    }
    let a = dt / spec.correlation_time;
    let mean = [spec.mean_h, spec.mean_h, spec.mean_v];
    let scale = [
        (2.0 * spec.var_h * a).sqrt(),
        (2.0 * spec.var_h * a).sqrt(),
        (2.0 * spec.var_v * a).sqrt(),
    ];
    let mut rng = seed::rng_for(seed, "quad/wind");
    let mut w = mean;
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        out.push(WindSample { h: [w[0], w[1]], v: w[2] });
        for k in 0..3 {
            let u: f64 = rng.random_range(-SQRT3..=SQRT3);
            w[k] += (mean[k] - w[k]) * a + scale[k] * u;
        }
    }
    Ok(out)
}

/// Simulator constants; the defaults are the benchmark settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub accel_limit: f64,
    pub integral_limit: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.01,
            duration: DURATION,
            accel_limit: 10.0,
            integral_limit: 5.0,
        }
    }
}

impl SimConfig {
    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Flown and desired positions at `t_k = k * dt`, plus the tracking cost.
/// `diverged` is set when the state went non-finite; `ace` is then `+inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub ace: f64,
    pub diverged: bool,
    pub dt: f64,
    pub positions: Vec<[f64; 3]>,
    pub reference: Vec<[f64; 3]>,
}

impl SimResult {
    /// Mean squared tracking error recomputed from the stored sequences.
    pub fn recompute_ace(&self) -> f64 {
        mean_sq_error(&self.positions, &self.reference)
    }

    /// CSV with columns `t, x, y, z, ref_x, ref_y, ref_z`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "z", "ref_x", "ref_y", "ref_z"])?;
        for (k, (p, r)) in self.positions.iter().zip(&self.reference).enumerate() {
            let t = k as f64 * self.dt;
            let row: Vec<String> = std::iter::once(t).chain(p.iter().copied()).chain(r.iter().copied()).map(fmt_f64).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn mean_sq_error(p: &[[f64; 3]], r: &[[f64; 3]]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(r)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>())
        .sum();
    total / p.len() as f64
}

pub fn simulate(gains: PidGains, kind: TrajectoryKind, wind: &WindDomainSpec, seed: u64) -> Result<SimResult> {
    simulate_with(gains, kind, wind, seed, &SimConfig::default())
}

/// Semi-implicit Euler flight starting at rest on the reference. The error
/// derivative is a backward difference and is zero on the first step.
pub fn simulate_with(
    gains: PidGains,
    kind: TrajectoryKind,
    wind: &WindDomainSpec,
    seed: u64,
    cfg: &SimConfig,
) -> Result<SimResult> {
    PidGains::new(gains.kp, gains.ki, gains.kd)?;
    if !(cfg.dt > 0.0 && cfg.duration > 0.0 && cfg.accel_limit > 0.0 && cfg.integral_limit >= 0.0) {
        return Err(Error::InvalidInput(format!("invalid simulator settings {cfg:?}")));
    }
    let n = cfg.n_steps().max(1);
    let gusts = dryden_wind(wind, seed, cfg.dt, n)?;
    let mut pos = reference_at(kind, 0.0);
    let mut vel = [0.0; 3];
    let mut integral = [0.0; 3];
    let mut prev_err: Option<[f64; 3]> = None;
    let mut positions = Vec::with_capacity(n);
    let mut reference = Vec::with_capacity(n);
    for (k, gust) in gusts.iter().enumerate() {
        let t = (k as f64 * cfg.dt).min(cfg.duration);
        let target = reference_at(kind, t);
        positions.push(pos);
        reference.push(target);
        let err = [target[0] - pos[0], target[1] - pos[1], target[2] - pos[2]];
        let force = gust.as_array();
        for a in 0..3 {
            integral[a] = (integral[a] + err[a] * cfg.dt).clamp(-cfg.integral_limit, cfg.integral_limit);
            let deriv = prev_err.map_or(0.0, |p| (err[a] - p[a]) / cfg.dt);
            let cmd = gains.kp * err[a] + gains.ki * integral[a] + gains.kd * deriv;
            let acc = cmd.clamp(-cfg.accel_limit, cfg.accel_limit) + force[a];
            vel[a] += acc * cfg.dt;
            pos[a] += vel[a] * cfg.dt;
        }
        prev_err = Some(err);
        if !pos.iter().chain(&vel).all(|v| v.is_finite()) {
            return Ok(SimResult {
                ace: f64::INFINITY,
                diverged: true,
                dt: cfg.dt,
                positions,
                reference,
            });
        }
    }
    let ace = mean_sq_error(&positions, &reference);
    Ok(SimResult {
        ace: if ace.is_finite() { ace } else { f64::INFINITY },
        diverged: !ace.is_finite(),
        dt: cfg.dt,
        positions,
        reference,
    })
}

/// Mean ACE over `kinds x seeds`, summed in a fixed order. Any diverged
/// flight makes the whole objective `+inf`.
pub fn pid_objective(gains: PidGains, wind: &WindDomainSpec, kinds: &[TrajectoryKind], seeds: &[u64]) -> Result<f64> {
    pid_objective_with(gains, wind, kinds, seeds, &SimConfig::default())
}

pub fn pid_objective_with(
    gains: PidGains,
    wind: &WindDomainSpec,
    kinds: &[TrajectoryKind],
    seeds: &[u64],
    cfg: &SimConfig,
) -> Result<f64> {
    if kinds.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidInput("pid objective needs at least one trajectory and one seed".into()));
    }
    let mut total = 0.0;
    for &kind in kinds {
        for &s in seeds {
            let r = simulate_with(gains, kind, wind, s, cfg)?;
            if r.diverged {
                return Ok(f64::INFINITY);
            }
            total += r.ace;
        }
    }
    Ok(total / (kinds.len() * seeds.len()) as f64)
}
