//! Gaussian-process regression with domain-invariant learning (DIL-GP).
//!
//! The crate is organised bottom-up:
//!
//! * [`gp`] exact GP inference, log marginal likelihood and the soft
//!   per-environment likelihood.
//! * [`dil`] the adversarial two-environment partition and the
//!   penalized min-max training loop.
//! * [`data`] synthetic shift datasets, CSV ingestion, standardization and
//!   the RMSE / coverage metrics.
//! * [`bo`] Bayesian optimization on top of either surrogate, with the
//!   information-gain and regret-bound diagnostics.
//! * [`quad`] a point-mass quadrotor PID testbed with colored wind.
//! * [`bench`] the experiment harnesses shared by the CLI and the acceptance
//!   suite.

pub mod bench;
pub mod bo;
pub mod data;
pub mod dil;
pub mod error;
pub mod gp;
pub mod quad;
pub mod seed;

pub use error::{Error, Result};
pub use gp::{GpModel, GpPosterior, KernelKind, KernelParams, Matrix, NoiseSpec, Vector};
