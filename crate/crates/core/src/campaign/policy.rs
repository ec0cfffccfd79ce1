use serde::{Deserialize, Serialize};

use super::config::check_domain;
use super::{CampaignConfig, CampaignState, Status};
use crate::error::{Error, Result};
use crate::kernel::SpatialFamily;
use crate::mean::MeanModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Issuer {
    #[default]
    Human,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    ParameterSpace { bounds: Vec<(f64, f64)> },
    /// Either part may be left unchanged.
    Surrogate {
        #[serde(default)]
        mean: Option<MeanModelSpec>,
        #[serde(default)]
        spatial_family: Option<SpatialFamily>,
    },
    CostRatio { cost_ratio: f64 },
    Convergence { max_iterations: usize },
    ForceFinalHighFidelity,
    Stop,
    NoChange,
}

impl PolicyKind {
    /// Config fields this change writes.
    pub fn touched_fields(&self) -> Vec<&'static str> {
        match self {
            PolicyKind::ParameterSpace { .. } => vec!["domain"],
            PolicyKind::Surrogate { mean, spatial_family } => {
                let mut v = Vec::new();
                if mean.is_some() {
                    v.push("surrogate.mean");
                }
                if spatial_family.is_some() {
                    v.push("surrogate.spatial_family");
                }
                v
            }
            PolicyKind::CostRatio { .. } => vec!["acquisition.cost_ratio"],
            PolicyKind::Convergence { .. } => vec!["max_iterations"],
            PolicyKind::ForceFinalHighFidelity | PolicyKind::Stop | PolicyKind::NoChange => vec![],
        }
    }

    /// Writes the change into `cfg` without any state checks.
    pub fn apply_to_config(&self, cfg: &mut CampaignConfig) {
        match self {
            PolicyKind::ParameterSpace { bounds } => cfg.domain = bounds.clone(),
            PolicyKind::Surrogate { mean, spatial_family } => {
                if let Some(m) = mean {
                    cfg.surrogate.mean = *m;
                }
                if let Some(s) = spatial_family {
                    cfg.surrogate.spatial_family = *s;
                }
            }
            PolicyKind::CostRatio { cost_ratio } => cfg.acquisition.cost_ratio = *cost_ratio,
            PolicyKind::Convergence { max_iterations } => cfg.max_iterations = *max_iterations,
            PolicyKind::ForceFinalHighFidelity | PolicyKind::Stop | PolicyKind::NoChange => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyChange {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default)]
    pub issuer: Issuer,
    /// Iteration at which the change took effect; filled in on application.
    #[serde(default)]
    pub issued_at: usize,
}

impl PolicyChange {
    pub fn human(kind: PolicyKind) -> Self {
        PolicyChange { kind, issuer: Issuer::Human, issued_at: 0 }
    }

    pub fn scripted(kind: PolicyKind) -> Self {
        PolicyChange { kind, issuer: Issuer::Scripted, issued_at: 0 }
    }
}

fn check_change(state: &CampaignState, kind: &PolicyKind) -> Result<()> {
    let reject = |msg: String| Err(Error::PolicyRejected(msg));
    match kind {
        PolicyKind::ParameterSpace { bounds } => {
            if bounds.len() != state.config.dim() {
                return reject(format!(
                    "parameter space needs {} intervals, got {}",
                    state.config.dim(),
                    bounds.len()
                ));
            }
            if let Err(msg) = check_domain(bounds, &state.config.objective) {
                return reject(msg);
            }
        }
        PolicyKind::Surrogate { mean, .. } => {
            if let Some(m) = mean {
                if let Err(e) = m.validate(state.config.dim()) {
                    return reject(e.to_string());
                }
            }
        }
        PolicyKind::CostRatio { cost_ratio } => {
            if !(*cost_ratio > 0.0 && cost_ratio.is_finite()) {
                return reject(format!("cost ratio must be > 0, got {cost_ratio}"));
            }
        }
        PolicyKind::Convergence { max_iterations } => {
            if *max_iterations <= state.iteration {
                return reject(format!(
                    "M_new > k is required: M_new = {max_iterations}, k = {}",
                    state.iteration
                ));
            }
        }
        PolicyKind::ForceFinalHighFidelity | PolicyKind::Stop | PolicyKind::NoChange => {}
    }
    Ok(())
}

/// Validates and applies one change, appending it to the policy log.
pub fn apply_policy_change(state: &mut CampaignState, mut change: PolicyChange) -> Result<()> {
    if !matches!(state.status, Status::Running | Status::AwaitingPolicy) {
        return Err(Error::InvalidStatus(format!("{:?}", state.status)));
    }
    check_change(state, &change.kind)?;
    change.kind.apply_to_config(&mut state.config);
    change.issued_at = state.iteration;
    state.status = match change.kind {
        PolicyKind::Stop => Status::Stopped,
        _ => Status::Running,
    };
    if change.kind == PolicyKind::ForceFinalHighFidelity {
        state.force_final_high = true;
    }
    state.diagnostic = None;
    state.policy_log.push(change);
    Ok(())
}

/// Applies every change or none. Errors list each rejected entry.
pub fn apply_policy_batch(state: &mut CampaignState, changes: Vec<PolicyChange>) -> Result<(), Vec<String>> {
    let mut trial = state.clone();
    let mut reasons = Vec::new();
    for (i, c) in changes.into_iter().enumerate() {
        if let Err(e) = apply_policy_change(&mut trial, c) {
            reasons.push(format!("change {i}: {e}"));
        }
    }
    if reasons.is_empty() {
        *state = trial;
        Ok(())
    } else {
        Err(reasons)
    }
}

/// Re-applies a policy log to a starting config.
pub fn replay_policy_log(initial: &CampaignConfig, log: &[PolicyChange]) -> CampaignConfig {
    let mut cfg = initial.clone();
    for c in log {
        c.kind.apply_to_config(&mut cfg);
    }
    cfg
}

/// Names of the policy-mutable config fields that differ between two configs.
pub fn config_diff(a: &CampaignConfig, b: &CampaignConfig) -> Vec<&'static str> {
    let mut out = Vec::new();
    if a.domain != b.domain {
        out.push("domain");
    }
    if a.surrogate.mean != b.surrogate.mean {
        out.push("surrogate.mean");
    }
    if a.surrogate.spatial_family != b.surrogate.spatial_family {
        out.push("surrogate.spatial_family");
    }
    if a.acquisition.cost_ratio != b.acquisition.cost_ratio {
        out.push("acquisition.cost_ratio");
    }
    if a.max_iterations != b.max_iterations {
        out.push("max_iterations");
    }
    let mut a_rest = a.clone();
    for f in &out {
        match *f {
            "domain" => a_rest.domain = b.domain.clone(),
            "surrogate.mean" => a_rest.surrogate.mean = b.surrogate.mean,
            "surrogate.spatial_family" => a_rest.surrogate.spatial_family = b.surrogate.spatial_family,
            "acquisition.cost_ratio" => a_rest.acquisition.cost_ratio = b.acquisition.cost_ratio,
            _ => a_rest.max_iterations = b.max_iterations,
        }
    }
    if a_rest != *b {
        out.push("other");
    }
    out
}

/// What fires a scripted response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "on", rename_all = "snake_case")]
pub enum Trigger {
    /// The `occurrence`-th stall prompt (1-based).
    Stall { occurrence: usize },
    /// Applied at the step boundary when `k` first equals `at`.
    Iteration { at: usize },
    /// Any prompt caused by a failed surrogate fit.
    FitFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRule {
    pub trigger: Trigger,
    pub changes: Vec<PolicyKind>,
}

/// Headless stand-in for the operator. Prompts without a matching rule are
/// answered with `NoChange` (stall) or `Stop` (fit failure).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub rules: Vec<ScriptedRule>,
}

impl ScriptedPolicy {
    /// Standard MFBO until the first stall, then switch to `mean` with cost
    /// ratio `cost_ratio`; one forced high-fidelity evaluation at iteration
    /// `final_at` ends the run.
    pub fn structured_switch(mean: MeanModelSpec, cost_ratio: f64, final_at: usize) -> Self {
        ScriptedPolicy {
            rules: vec![
                ScriptedRule {
                    trigger: Trigger::Stall { occurrence: 1 },
                    changes: vec![
                        PolicyKind::Surrogate { mean: Some(mean), spatial_family: None },
                        PolicyKind::CostRatio { cost_ratio },
                    ],
                },
                ScriptedRule {
                    trigger: Trigger::Iteration { at: final_at },
                    changes: vec![PolicyKind::ForceFinalHighFidelity],
                },
            ],
        }
    }

    pub fn changes_for(&self, trigger: Trigger) -> Option<Vec<PolicyChange>> {
        self.rules
            .iter()
            .find(|r| r.trigger == trigger)
            .map(|r| r.changes.iter().cloned().map(PolicyChange::scripted).collect())
    }

    /// Iteration-triggered changes for the current `k` that have not been
    /// applied yet.
    pub fn due_at_iteration(&self, state: &CampaignState) -> Option<Vec<PolicyChange>> {
        let at = state.iteration;
        let rule = self.rules.iter().find(|r| r.trigger == Trigger::Iteration { at })?;
        let applied = rule.changes.iter().all(|k| {
            state
                .policy_log
                .iter()
                .any(|c| c.issued_at == at && c.issuer == Issuer::Scripted && c.kind == *k)
        });
        if applied {
            None
        } else {
            Some(rule.changes.iter().cloned().map(PolicyChange::scripted).collect())
        }
    }
}
