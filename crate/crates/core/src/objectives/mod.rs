//! Built-in objectives evaluable at either fidelity.

pub mod analytic;
pub mod ising;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Fidelity;
use analytic::AnalyticProblem;
use ising::IsingConfig;

/// Default interaction-strength window for Ising campaigns.
pub const ISING_DOMAIN: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Analytic { problem: AnalyticProblem },
    /// Heat capacity as a function of `J`; each fidelity has its own
    /// simulator config (its `j_coupling` and `rng_seed` are overwritten per
    /// evaluation).
    Ising { low: IsingConfig, high: IsingConfig },
}

impl ObjectiveSpec {
    pub fn analytic(problem: AnalyticProblem) -> Self {
        ObjectiveSpec::Analytic { problem }
    }

    /// 60x60 square high fidelity, 20x20 square low fidelity.
    pub fn ising_square() -> Self {
        ObjectiveSpec::Ising { low: IsingConfig::square(20), high: IsingConfig::square(60) }
    }

    /// 60x60 square high fidelity, 20x20 triangular Kawasaki low fidelity.
    pub fn ising_triangular_low() -> Self {
        ObjectiveSpec::Ising { low: IsingConfig::triangular(20), high: IsingConfig::square(60) }
    }

    pub fn name(&self) -> String {
        match self {
            ObjectiveSpec::Analytic { problem } => problem.name().to_string(),
            ObjectiveSpec::Ising { low, high } => format!(
                "ising_{:?}{}_{:?}{}",
                high.lattice_kind, high.n, low.lattice_kind, low.n
            )
            .to_lowercase(),
        }
    }

    pub fn dim(&self) -> usize {
        1
    }

    pub fn default_domain(&self) -> Vec<(f64, f64)> {
        match self {
            ObjectiveSpec::Analytic { .. } => vec![analytic::DOMAIN],
            ObjectiveSpec::Ising { .. } => vec![ISING_DOMAIN],
        }
    }

    /// True when repeated evaluations at one point can differ by seed.
    pub fn is_stochastic(&self) -> bool {
        matches!(self, ObjectiveSpec::Ising { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if let ObjectiveSpec::Ising { low, high } = self {
            low.validate()?;
            high.validate()?;
        }
        Ok(())
    }

    /// Config the simulator runs for one evaluation.
    pub fn ising_config(&self, j: f64, f: Fidelity, seed: u64) -> Option<IsingConfig> {
        match self {
            ObjectiveSpec::Ising { low, high } => {
                let base = if f == Fidelity::High { high } else { low };
                Some(base.with_coupling(j, seed))
            }
            ObjectiveSpec::Analytic { .. } => None,
        }
    }

    pub fn evaluate(&self, x: &[f64], f: Fidelity, seed: u64) -> Result<f64> {
        if x.len() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, actual: x.len() });
        }
        match self {
            ObjectiveSpec::Analytic { problem } => analytic::eval_analytic(*problem, x[0], f),
            ObjectiveSpec::Ising { .. } => {
                let cfg = self.ising_config(x[0], f, seed).expect("ising objective");
                ising::simulate_heat_capacity(&cfg)
            }
        }
    }
}
