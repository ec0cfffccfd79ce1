//! Wire form of a session's current state.

use imfbo_core::campaign::{Best, CampaignState, PolicyChange, PromptReason, Status, StepOutput};
use serde::{Deserialize, Serialize};

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// Option menu offered with every prompt.
pub const POLICY_OPTIONS: [&str; 4] = ["parameter space", "surrogate model", "acquisition function", "convergence criteria"];

/// Describes how a flat grid array is laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub bounds: Vec<(f64, f64)>,
    pub resolution: usize,
    /// Number of grid points; flat arrays of coordinates have `points * dim`
    /// entries, value arrays have `points`.
    pub points: usize,
    /// Points vary fastest in the last dimension.
    pub order: String,
}

/// Observations as parallel flat arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    /// `len * dim` coordinates, row-major.
    pub x: Vec<f64>,
    /// 0 for low fidelity, 1 for high.
    pub f: Vec<u8>,
    pub y: Vec<f64>,
}

/// Surrogate and acquisition grids from the most recent fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateGrids {
    /// Iteration whose fit produced these grids (the grids use the data
    /// available before that iteration's evaluation).
    pub fitted_for_iteration: usize,
    pub grid_spec: GridSpec,
    pub grid: Vec<f64>,
    pub mu_high: Vec<f64>,
    pub var_high: Vec<f64>,
    pub mu_low: Vec<f64>,
    pub var_low: Vec<f64>,
    /// `u(x, 0)`.
    pub acquisition_low: Vec<f64>,
    /// `u(x, 1)`.
    pub acquisition_high: Vec<f64>,
}

impl SurrogateGrids {
    pub fn from_step(out: &StepOutput, domain: &[(f64, f64)], resolution: usize) -> Self {
        SurrogateGrids {
            fitted_for_iteration: out.record.iteration,
            grid_spec: GridSpec {
                dim: domain.len(),
                bounds: domain.to_vec(),
                resolution,
                points: out.grid.len(),
                order: "lexicographic".into(),
            },
            grid: out.grid.iter().flatten().copied().collect(),
            mu_high: out.prediction.mu_hf.clone(),
            var_high: out.prediction.var_hf.clone(),
            mu_low: out.prediction.mu_lf.clone(),
            var_low: out.prediction.var_lf.clone(),
            acquisition_low: out.curves.u_lf.clone(),
            acquisition_high: out.curves.u_hf.clone(),
        }
    }

    /// Every value array matches the grid spec.
    pub fn is_consistent(&self) -> bool {
        let n = self.grid_spec.points;
        self.grid.len() == n * self.grid_spec.dim
            && [
                &self.mu_high,
                &self.var_high,
                &self.mu_low,
                &self.var_low,
                &self.acquisition_low,
                &self.acquisition_high,
            ]
            .iter()
            .all(|v| v.len() == n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPrompt {
    pub reason: PromptReason,
    pub iteration: usize,
    pub question: String,
    pub options: Vec<String>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub schema_version: u32,
    pub session_id: String,
    pub iteration: usize,
    pub max_iterations: usize,
    pub status: Status,
    pub observations: Observations,
    pub best: Best,
    pub surrogate: Option<SurrogateGrids>,
    pub pending_prompt: Option<PolicyPrompt>,
    pub policy_log: Vec<PolicyChange>,
}

impl SessionSnapshot {
    pub fn build(session_id: &str, state: &CampaignState, surrogate: Option<SurrogateGrids>) -> Self {
        let observations = Observations {
            x: state.dataset.points.iter().flat_map(|p| p.x.iter().copied()).collect(),
            f: state.dataset.points.iter().map(|p| p.f.index()).collect(),
            y: state.dataset.outputs.clone(),
        };
        let pending_prompt = match (state.status, state.prompts.last()) {
            (Status::AwaitingPolicy, Some(p)) => Some(PolicyPrompt {
                reason: p.reason,
                iteration: p.iteration,
                question: match p.reason {
                    PromptReason::Stall => "No improvement over the last iterations. Change the policy?".into(),
                    PromptReason::FitFailure => "The surrogate fit failed. Change the policy?".into(),
                },
                options: POLICY_OPTIONS.iter().map(|s| s.to_string()).collect(),
                detail: p.detail.clone(),
            }),
            _ => None,
        };
        SessionSnapshot {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            session_id: session_id.to_string(),
            iteration: state.iteration,
            max_iterations: state.config.max_iterations,
            status: state.status,
            observations,
            best: state.best.clone(),
            surrogate,
            pending_prompt,
            policy_log: state.policy_log.clone(),
        }
    }

    /// Grids agree with their spec and `best` is one of the observations
    /// with the largest output.
    pub fn is_consistent(&self) -> bool {
        let grids_ok = self.surrogate.as_ref().is_none_or(SurrogateGrids::is_consistent);
        let obs = &self.observations;
        let n = obs.y.len();
        let dim = if n == 0 { 0 } else { obs.x.len() / n };
        let max = obs.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best_ok = n == 0
            || (self.best.y == max
                && (0..n).any(|i| {
                    obs.y[i] == self.best.y && obs.f[i] == self.best.f.index() && obs.x[i * dim..(i + 1) * dim] == self.best.x[..]
                }));
        grids_ok && obs.f.len() == n && obs.x.len() == n * dim && best_ok
    }
}
