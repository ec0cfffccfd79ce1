use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionConfig, TieRule};
use crate::error::{Error, Result};
use crate::gp::{GpModelSpec, HyperPriors, McmcConfig};
use crate::kernel::{Fidelity, FidelityCoupling, SpatialFamily};
use crate::mean::{BaseForm, MeanModelSpec};
use crate::objectives::analytic::AnalyticProblem;
use crate::objectives::ObjectiveSpec;
use crate::prior::PriorDistribution;

pub const DEFAULT_GRID_RESOLUTION: usize = 201;
pub const DEFAULT_STALL_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum InitFidelityRule {
    /// Independent fair coin per sample.
    #[default]
    Coin,
    /// Exactly `low` low-fidelity and `high` high-fidelity samples, in random
    /// order.
    Fixed { low: usize, high: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CampaignMode {
    #[default]
    NonInteractive,
    Interactive,
    SingleFidelityBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub spatial_family: SpatialFamily,
    #[serde(default)]
    pub mean: MeanModelSpec,
    #[serde(default)]
    pub priors: HyperPriors,
    #[serde(default)]
    pub mcmc: McmcConfig,
}

/// One field-level validation problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

impl FieldIssue {
    fn new(field: &str, message: impl Into<String>) -> Self {
        FieldIssue { field: field.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub objective: ObjectiveSpec,
    /// `[lo, hi]` per input dimension.
    pub domain: Vec<(f64, f64)>,
    #[serde(default = "default_resolution")]
    pub grid_resolution: usize,
    pub init_count: usize,
    #[serde(default)]
    pub init_fidelity_rule: InitFidelityRule,
    pub max_iterations: usize,
    pub acquisition: AcquisitionConfig,
    pub surrogate: SurrogateConfig,
    #[serde(default = "default_stall_window")]
    pub stall_window: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub mode: CampaignMode,
    #[serde(default)]
    pub tie_rule: TieRule,
    /// Fidelity used when every acquisition value is zero.
    #[serde(default = "default_fallback")]
    pub fallback_fidelity: Fidelity,
}

fn default_resolution() -> usize {
    DEFAULT_GRID_RESOLUTION
}

fn default_stall_window() -> usize {
    DEFAULT_STALL_WINDOW
}

fn default_fallback() -> Fidelity {
    Fidelity::Low
}

/// Hyperpriors for the analytic problems, whose outputs span about +-20.
pub fn analytic_priors() -> HyperPriors {
    HyperPriors {
        sigma2: PriorDistribution::uniform(0.01, 400.0),
        length_scale: PriorDistribution::uniform(0.05, 3.0),
        delta: PriorDistribution::uniform(0.01, 5.0),
        noise2: PriorDistribution::half_normal(0.03),
    }
}

impl CampaignConfig {
    /// Problem 1 with 7 low / 3 high initial samples, `M = 15`, `C = 5/4`.
    pub fn problem1() -> Self {
        CampaignConfig {
            objective: ObjectiveSpec::analytic(AnalyticProblem::Problem1),
            domain: vec![crate::objectives::analytic::DOMAIN],
            grid_resolution: DEFAULT_GRID_RESOLUTION,
            init_count: 10,
            init_fidelity_rule: InitFidelityRule::Fixed { low: 7, high: 3 },
            max_iterations: 15,
            acquisition: AcquisitionConfig::with_cost_ratio(1.25),
            surrogate: SurrogateConfig {
                spatial_family: SpatialFamily::Rbf,
                mean: MeanModelSpec::Zero,
                priors: analytic_priors(),
                mcmc: McmcConfig::default(),
            },
            stall_window: DEFAULT_STALL_WINDOW,
            rng_seed: 0,
            mode: CampaignMode::NonInteractive,
            tie_rule: TieRule::default(),
            fallback_fidelity: Fidelity::Low,
        }
    }

    /// Problem 2 with the same budget; `mean` selects MFBO or sMFBO.
    pub fn problem2(mean: MeanModelSpec) -> Self {
        let mut cfg = CampaignConfig::problem1();
        cfg.objective = ObjectiveSpec::analytic(AnalyticProblem::Problem2);
        cfg.surrogate.mean = mean;
        cfg
    }

    /// sMFBO on problem 2 with the correct base form.
    pub fn problem2_structured() -> Self {
        CampaignConfig::problem2(MeanModelSpec::piecewise(BaseForm::F1Form))
    }

    /// Ising heat-capacity campaign: 6 low / 4 high initial samples, 25
    /// iterations, `C = 8.6`, Matern-5/2 kernel and the default priors.
    pub fn ising(objective: ObjectiveSpec, mean: MeanModelSpec) -> Self {
        let domain = objective.default_domain();
        CampaignConfig {
            objective,
            domain,
            grid_resolution: DEFAULT_GRID_RESOLUTION,
            init_count: 10,
            init_fidelity_rule: InitFidelityRule::Fixed { low: 6, high: 4 },
            max_iterations: 25,
            acquisition: AcquisitionConfig::with_cost_ratio(8.6),
            surrogate: SurrogateConfig {
                spatial_family: SpatialFamily::Matern52,
                mean,
                priors: HyperPriors::default(),
                mcmc: McmcConfig::default(),
            },
            stall_window: DEFAULT_STALL_WINDOW,
            rng_seed: 0,
            mode: CampaignMode::NonInteractive,
            tie_rule: TieRule::default(),
            fallback_fidelity: Fidelity::Low,
        }
    }

    /// High-fidelity-only counterpart: 4 initial samples and 4 iterations.
    pub fn baseline_of(&self) -> Self {
        CampaignConfig {
            init_count: 4,
            init_fidelity_rule: InitFidelityRule::Fixed { low: 0, high: 4 },
            max_iterations: 4,
            mode: CampaignMode::SingleFidelityBaseline,
            fallback_fidelity: Fidelity::High,
            ..self.clone()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    pub fn is_baseline(&self) -> bool {
        self.mode == CampaignMode::SingleFidelityBaseline
    }

    /// Surrogate as fitted: the baseline drops the fidelity kernel.
    pub fn model_spec(&self) -> GpModelSpec {
        GpModelSpec {
            spatial_family: self.surrogate.spatial_family,
            coupling: if self.is_baseline() { FidelityCoupling::Constant } else { FidelityCoupling::Exponential },
            mean: self.surrogate.mean,
            priors: self.surrogate.priors,
        }
    }

    /// Acquisition as applied: the baseline uses plain EI.
    pub fn effective_acquisition(&self) -> AcquisitionConfig {
        if self.is_baseline() {
            AcquisitionConfig { cost_ratio: 1.0, ..self.acquisition }
        } else {
            self.acquisition
        }
    }

    /// Every validation problem, keyed by field name.
    pub fn issues(&self) -> Vec<FieldIssue> {
        let mut out = Vec::new();
        if let Err(e) = self.objective.validate() {
            out.push(FieldIssue::new("objective", e.to_string()));
        }
        if let Err(msg) = check_domain(&self.domain, &self.objective) {
            out.push(FieldIssue::new("domain", msg));
        }
        if self.grid_resolution < 2 {
            out.push(FieldIssue::new("grid_resolution", "must be >= 2"));
        }
        if self.init_count < 2 {
            out.push(FieldIssue::new("init_count", format!("must be >= 2, got {}", self.init_count)));
        }
        if let InitFidelityRule::Fixed { low, high } = self.init_fidelity_rule {
            if low + high != self.init_count {
                out.push(FieldIssue::new(
                    "init_fidelity_rule",
                    format!("low + high = {} but init_count = {}", low + high, self.init_count),
                ));
            }
        }
        if self.stall_window < 1 {
            out.push(FieldIssue::new("stall_window", "must be >= 1"));
        }
        if let Err(e) = self.acquisition.validate() {
            out.push(FieldIssue::new("acquisition", e.to_string()));
        }
        if let Err(e) = self.surrogate.priors.validate() {
            out.push(FieldIssue::new("surrogate.priors", e.to_string()));
        }
        if let Err(e) = self.surrogate.mean.validate(self.dim()) {
            out.push(FieldIssue::new("surrogate.mean", e.to_string()));
        }
        if let Err(e) = self.surrogate.mcmc.validate() {
            out.push(FieldIssue::new("surrogate.mcmc", e.to_string()));
        }
        if self.dim() != self.objective.dim() {
            out.push(FieldIssue::new(
                "domain",
                format!("objective is {}-dimensional, domain has {} intervals", self.objective.dim(), self.dim()),
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.issues().into_iter().next() {
            None => Ok(()),
            Some(i) => Err(Error::Config { field: i.field, reason: i.message }),
        }
    }
}

/// Bounds must be finite nonempty intervals inside the objective's own domain.
pub(crate) fn check_domain(domain: &[(f64, f64)], objective: &ObjectiveSpec) -> Result<(), String> {
    if domain.is_empty() {
        return Err("at least one dimension is required".into());
    }
    for (m, &(lo, hi)) in domain.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(format!("dimension {m}: [{lo}, {hi}] is not a nonempty interval"));
        }
    }
    if let ObjectiveSpec::Analytic { .. } = objective {
        let (a, b) = crate::objectives::analytic::DOMAIN;
        if let Some(&(lo, hi)) = domain.iter().find(|&&(lo, hi)| lo < a || hi > b) {
            return Err(format!("[{lo}, {hi}] leaves the problem domain [{a}, {b}]"));
        }
    }
    Ok(())
}

/// Evenly spaced grid over `domain`, `resolution` points per dimension, in
/// lexicographic order.
pub fn candidate_grid(domain: &[(f64, f64)], resolution: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = domain
        .iter()
        .map(|&(lo, hi)| {
            (0..resolution)
                .map(|i| if i + 1 == resolution { hi } else { lo + (hi - lo) * i as f64 / (resolution - 1) as f64 })
                .collect()
        })
        .collect();
    let mut grid: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        grid = grid
            .iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    grid
}
