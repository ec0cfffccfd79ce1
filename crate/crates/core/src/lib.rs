//! Multi-fidelity Bayesian optimization engine.
//!
//! The crate fits a two-level multi-fidelity Gaussian process (optionally with
//! a structured, physics-informed mean), scores candidate `(x, fidelity)` pairs
//! with a cost-aware expected-improvement acquisition, evaluates the selected
//! point on a built-in objective and lets an operator (or a script) retune the
//! campaign policy between iterations.
//!
//! Module map:
//!
//! - [`kernel`]: product covariance over inputs and fidelity labels.
//! - [`mean`]: zero, piecewise-offset and Gaussian-peak mean models with priors.
//! - [`gp`]: marginal likelihood, MCMC posterior sampling and prediction.
//! - [`acquisition`]: expected improvement and the multi-fidelity selection rule.
//! - [`objectives`]: analytic test problems and Ising lattice simulators.
//! - [`campaign`]: the optimization loop, interactive policy layer and MSE.
//! - [`report`]: batch comparison runs.

pub mod acquisition;
pub mod campaign;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod mean;
pub mod objectives;
pub mod prior;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
pub use kernel::{Fidelity, FidelityPoint, KernelHyperParams, SpatialFamily};
