//! The optimization loop and its interactive policy layer.
//!
//! A campaign alternates fit, predict, acquire and evaluate until its
//! iteration budget is spent. Between steps an operator (or a
//! [`ScriptedPolicy`]) may change the search space, surrogate, cost ratio or
//! budget; every change is logged with the iteration it took effect.
//!
//! Each stochastic stage draws from a stream keyed by the campaign seed and
//! the iteration number, so a state restored from disk continues exactly as
//! the original would have.

mod config;
mod evaluation;
mod persist;
mod policy;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    analytic_priors, candidate_grid, CampaignConfig, CampaignMode, FieldIssue, InitFidelityRule,
    SurrogateConfig, DEFAULT_GRID_RESOLUTION, DEFAULT_STALL_WINDOW,
};
pub use evaluation::{compute_mse, final_prediction, mse_against, GroundTruth, MseReport};
pub use persist::{history_diff, observations_csv, CampaignDocument, SCHEMA_VERSION};
pub use policy::{
    apply_policy_batch, apply_policy_change, config_diff, replay_policy_log, Issuer, PolicyChange,
    PolicyKind, ScriptedPolicy, ScriptedRule, Trigger,
};

use crate::acquisition::{mf_acquisition, select_next, AcquisitionCurves, CandidateMask, Selection};
use crate::error::{Error, Result};
use crate::gp::{fit_mcmc, predict, Dataset, PosteriorPrediction};
use crate::kernel::{Fidelity, FidelityPoint};
use crate::rng::{self, Stage};

/// Two grid points closer than this in every coordinate are the same point.
pub const SAME_POINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Running,
    AwaitingPolicy,
    Converged,
    Stopped,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Converged | Status::Stopped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub x: Vec<f64>,
    pub f: Fidelity,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based index of the completed iteration.
    pub iteration: usize,
    pub x: Vec<f64>,
    pub f: Fidelity,
    pub y: f64,
    pub acquisition_max: f64,
    pub fallback: bool,
    /// Fidelity was forced to high by a final-evaluation policy.
    pub forced: bool,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptReason {
    Stall,
    FitFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub iteration: usize,
    pub reason: PromptReason,
    #[serde(default)]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub config: CampaignConfig,
    /// Config as initialized, before any policy change.
    pub initial_config: CampaignConfig,
    pub dataset: Dataset,
    pub iteration: usize,
    pub best: Best,
    pub history: Vec<IterationRecord>,
    pub policy_log: Vec<PolicyChange>,
    pub prompts: Vec<PromptRecord>,
    pub status: Status,
    /// Set by `ForceFinalHighFidelity`; consumed by the next step.
    pub force_final_high: bool,
    /// Why the campaign is waiting, if it is.
    pub diagnostic: Option<String>,
}

/// Everything one step computed, for snapshots and plots.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub grid: Vec<Vec<f64>>,
    pub prediction: PosteriorPrediction,
    pub curves: AcquisitionCurves,
    pub selection: Selection,
    pub record: IterationRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Completed(Box<StepOutput>),
    /// The surrogate could not be fitted; the campaign awaits a policy.
    FitFailed(String),
}

fn objective_seed(cfg: &CampaignConfig, eval_index: usize) -> u64 {
    rng::derive_seed(cfg.rng_seed, Stage::Objective, eval_index as u64)
}

pub fn initialize(cfg: CampaignConfig) -> Result<CampaignState> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.rng_seed, Stage::Init, 0);
    let j = cfg.init_count;
    let fidelities: Vec<Fidelity> = if cfg.is_baseline() {
        vec![Fidelity::High; j]
    } else {
        match cfg.init_fidelity_rule {
            InitFidelityRule::Coin => (0..j)
                .map(|_| if rng.random::<bool>() { Fidelity::High } else { Fidelity::Low })
                .collect(),
            InitFidelityRule::Fixed { low, high } => {
                let mut v = [vec![Fidelity::Low; low], vec![Fidelity::High; high]].concat();
                v.shuffle(&mut rng);
                v
            }
        }
    };
    let mut dataset = Dataset::default();
    for (i, f) in fidelities.into_iter().enumerate() {
        let x: Vec<f64> = cfg.domain.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect();
        let y = cfg.objective.evaluate(&x, f, objective_seed(&cfg, i))?;
        dataset.push(FidelityPoint::new(x, f), y);
    }
    let best = best_of(&dataset).expect("init_count >= 2");
    let status = if cfg.max_iterations == 0 { Status::Converged } else { Status::Running };
    Ok(CampaignState {
        initial_config: cfg.clone(),
        config: cfg,
        dataset,
        iteration: 0,
        best,
        history: Vec::new(),
        policy_log: Vec::new(),
        prompts: Vec::new(),
        status,
        force_final_high: false,
        diagnostic: None,
    })
}

/// Largest output over both fidelities; the first occurrence wins ties.
fn best_of(data: &Dataset) -> Option<Best> {
    let mut best: Option<Best> = None;
    for (p, &y) in data.points.iter().zip(&data.outputs) {
        if best.as_ref().is_none_or(|b| y > b.y) {
            best = Some(Best { x: p.x.clone(), f: p.f, y });
        }
    }
    best
}

impl CampaignState {
    pub fn grid(&self) -> Vec<Vec<f64>> {
        candidate_grid(&self.config.domain, self.config.grid_resolution)
    }

    /// Grid points not yet observed at each fidelity. The baseline and a
    /// pending final evaluation only allow high fidelity.
    pub fn candidate_mask(&self, grid: &[Vec<f64>]) -> CandidateMask {
        let mut mask = CandidateMask::all(grid.len());
        for p in &self.dataset.points {
            let allowed = match p.f {
                Fidelity::High => &mut mask.high,
                Fidelity::Low => &mut mask.low,
            };
            for (i, g) in grid.iter().enumerate() {
                if g.iter().zip(&p.x).all(|(a, b)| (a - b).abs() <= SAME_POINT_TOL) {
                    allowed[i] = false;
                }
            }
        }
        if self.config.is_baseline() || self.force_final_high {
            mask.disable(Fidelity::Low);
        }
        mask
    }

    /// Best high-fidelity observation, if any.
    pub fn best_high(&self) -> Option<Best> {
        best_of(&self.dataset.subset(Fidelity::High))
    }

    pub fn fidelity_counts(&self) -> (usize, usize) {
        (self.dataset.count(Fidelity::Low), self.dataset.count(Fidelity::High))
    }

    /// History fidelity tally `(low, high)`.
    pub fn suggested_counts(&self) -> (usize, usize) {
        let high = self.history.iter().filter(|r| r.f == Fidelity::High).count();
        (self.history.len() - high, high)
    }

    fn last_policy_iteration(&self) -> Option<usize> {
        self.policy_log.last().map(|c| c.issued_at)
    }

    /// A stall prompt is due when [`check_stall`] holds and a full window has
    /// passed since the last policy response.
    pub fn stall_prompt_due(&self) -> bool {
        let w = self.config.stall_window;
        let quiet = self.last_policy_iteration().is_none_or(|at| self.iteration >= at + w);
        quiet && check_stall(self)
    }

    /// Marks the campaign as waiting for a policy response.
    pub fn raise_prompt(&mut self, reason: PromptReason, detail: Option<String>) {
        self.status = Status::AwaitingPolicy;
        self.diagnostic = detail.clone();
        self.prompts.push(PromptRecord { iteration: self.iteration, reason, detail });
    }

    /// Stall prompts raised so far.
    pub fn stall_count(&self) -> usize {
        self.prompts.iter().filter(|p| p.reason == PromptReason::Stall).count()
    }
}

/// True iff the last `stall_window` completed iterations produced no output
/// above the best recorded before them.
pub fn check_stall(state: &CampaignState) -> bool {
    let w = state.config.stall_window;
    let n = state.dataset.outputs.len();
    if w == 0 || state.history.len() < w || n <= w {
        return false;
    }
    let (before, window) = state.dataset.outputs.split_at(n - w);
    let prior_best = before.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    window.iter().all(|&y| y <= prior_best)
}

/// Fits, predicts and scores on the current grid without evaluating anything.
pub fn plan_next(state: &CampaignState) -> Result<(Vec<Vec<f64>>, PosteriorPrediction, AcquisitionCurves, Selection)> {
    let cfg = &state.config;
    let k = state.iteration as u64;
    let grid = state.grid();
    let spec = cfg.model_spec();
    let draws = fit_mcmc(&state.dataset, &spec, &cfg.surrogate.mcmc, rng::derive_seed(cfg.rng_seed, Stage::Fit, k))?;
    let prediction = predict(&state.dataset, &draws, &spec.mean, &grid)?;
    let curves = mf_acquisition(&prediction, state.best.y, &cfg.effective_acquisition())?;
    let mask = state.candidate_mask(&grid);
    let fallback = if cfg.is_baseline() || state.force_final_high { Fidelity::High } else { cfg.fallback_fidelity };
    let mut rng = rng::stream(cfg.rng_seed, Stage::Fallback, k);
    let selection = select_next(&curves, &grid, &mask, cfg.tie_rule, fallback, &mut rng)?;
    Ok((grid, prediction, curves, selection))
}

/// One fit, predict, acquire, evaluate, augment cycle.
///
/// Surrogate failures put an interactive campaign into `AwaitingPolicy` and
/// are returned as errors otherwise.
pub fn step(state: &mut CampaignState) -> Result<StepOutcome> {
    if state.status != Status::Running {
        return Err(Error::InvalidStatus(format!("{:?}", state.status)));
    }
    if state.iteration >= state.config.max_iterations {
        state.status = Status::Converged;
        return Err(Error::InvalidStatus("iteration budget exhausted".into()));
    }
    let started = Instant::now();
    let (grid, prediction, curves, selection) = match plan_next(state) {
        Ok(p) => p,
        Err(e @ (Error::Mcmc { .. } | Error::Factorization { .. })) => {
            if state.config.mode == CampaignMode::Interactive {
                let msg = e.to_string();
                state.raise_prompt(PromptReason::FitFailure, Some(msg.clone()));
                return Ok(StepOutcome::FitFailed(msg));
            }
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let y = state
        .config
        .objective
        .evaluate(&selection.x, selection.f, objective_seed(&state.config, state.dataset.len()))?;
    state.dataset.push(FidelityPoint::new(selection.x.clone(), selection.f), y);
    if y > state.best.y {
        state.best = Best { x: selection.x.clone(), f: selection.f, y };
    }
    state.iteration += 1;
    let forced = std::mem::take(&mut state.force_final_high);
    let record = IterationRecord {
        iteration: state.iteration,
        x: selection.x.clone(),
        f: selection.f,
        y,
        acquisition_max: selection.value,
        fallback: selection.fallback,
        forced,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    state.history.push(record.clone());
    if forced {
        state.status = Status::Stopped;
    } else if state.iteration >= state.config.max_iterations {
        state.status = Status::Converged;
    }
    Ok(StepOutcome::Completed(Box::new(StepOutput { grid, prediction, curves, selection, record })))
}

/// Initializes and steps until the budget is spent.
pub fn run_noninteractive(cfg: CampaignConfig) -> Result<CampaignState> {
    if cfg.mode != CampaignMode::NonInteractive {
        return Err(Error::config("mode", "run_noninteractive needs mode NonInteractive"));
    }
    run_to_end(initialize(cfg)?)
}

/// High-fidelity-only loop with a plain GP and plain EI.
pub fn run_single_fidelity_baseline(cfg: CampaignConfig) -> Result<CampaignState> {
    if cfg.mode != CampaignMode::SingleFidelityBaseline {
        return Err(Error::config("mode", "baseline runs need mode SingleFidelityBaseline"));
    }
    run_to_end(initialize(cfg)?)
}

fn run_to_end(mut state: CampaignState) -> Result<CampaignState> {
    while state.status == Status::Running {
        step(&mut state)?;
    }
    Ok(state)
}

/// Interactive loop with prompts answered by `policy`. Also used to resume a
/// restored state.
pub fn drive_scripted(state: &mut CampaignState, policy: &ScriptedPolicy) -> Result<()> {
    drive_scripted_for(state, policy, usize::MAX)
}

/// Like [`drive_scripted`] but returns once `max_steps` evaluations have been
/// added, leaving the state resumable.
pub fn drive_scripted_for(state: &mut CampaignState, policy: &ScriptedPolicy, max_steps: usize) -> Result<()> {
    let mut taken = 0;
    loop {
        match state.status {
            Status::Converged | Status::Stopped => return Ok(()),
            _ if taken >= max_steps => return Ok(()),
            Status::AwaitingPolicy => {
                let last = state.prompts.last().cloned();
                let changes = match last.map(|p| p.reason) {
                    Some(PromptReason::FitFailure) => policy
                        .changes_for(Trigger::FitFailure)
                        .unwrap_or_else(|| vec![PolicyChange::scripted(PolicyKind::Stop)]),
                    _ => policy
                        .changes_for(Trigger::Stall { occurrence: state.stall_count() })
                        .unwrap_or_else(|| vec![PolicyChange::scripted(PolicyKind::NoChange)]),
                };
                apply_policy_batch(state, changes).map_err(|r| Error::PolicyRejected(r.join("; ")))?;
            }
            Status::Running => {
                if let Some(changes) = policy.due_at_iteration(state) {
                    apply_policy_batch(state, changes).map_err(|r| Error::PolicyRejected(r.join("; ")))?;
                    continue;
                }
                if let StepOutcome::Completed(_) = step(state)? {
                    taken += 1;
                    if state.status == Status::Running && state.stall_prompt_due() {
                        state.raise_prompt(PromptReason::Stall, None);
                    }
                }
            }
        }
    }
}

/// Re-runs a campaign from its initial config, applying each logged policy
/// change at the iteration it was issued. Interactive stall prompts are
/// raised exactly as a live session raises them, so a faithful log
/// reproduces the original history.
pub fn replay(original: &CampaignState) -> Result<CampaignState> {
    let mut state = initialize(original.initial_config.clone())?;
    let log = &original.policy_log;
    let mut next = 0;
    loop {
        let mut applied = false;
        while next < log.len() && log[next].issued_at == state.iteration {
            apply_policy_change(&mut state, log[next].clone())?;
            next += 1;
            applied = true;
        }
        if applied {
            continue;
        }
        if state.status != Status::Running || state.iteration >= original.iteration {
            return Ok(state);
        }
        if let StepOutcome::Completed(_) = step(&mut state)? {
            let interactive = state.config.mode == CampaignMode::Interactive;
            if interactive && state.status == Status::Running && state.stall_prompt_due() {
                state.raise_prompt(PromptReason::Stall, None);
            }
        }
    }
}

pub fn run_interactive_scripted(cfg: CampaignConfig, policy: &ScriptedPolicy) -> Result<CampaignState> {
    if cfg.mode != CampaignMode::Interactive {
        return Err(Error::config("mode", "scripted interactive runs need mode Interactive"));
    }
    let mut state = initialize(cfg)?;
    drive_scripted(&mut state, policy)?;
    Ok(state)
}

/// Runs whichever loop `cfg.mode` selects; `policy` only matters for
/// interactive configs.
pub fn run(cfg: CampaignConfig, policy: Option<&ScriptedPolicy>) -> Result<CampaignState> {
    match cfg.mode {
        CampaignMode::NonInteractive => run_noninteractive(cfg),
        CampaignMode::SingleFidelityBaseline => run_single_fidelity_baseline(cfg),
        CampaignMode::Interactive => run_interactive_scripted(cfg, policy.unwrap_or(&ScriptedPolicy::default())),
    }
}
