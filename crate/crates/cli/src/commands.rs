use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use imfbo_core::campaign::{
    compute_mse, history_diff, replay as replay_campaign, run as run_campaign, run_single_fidelity_baseline, CampaignConfig,
    CampaignMode, CampaignState, ScriptedPolicy,
};
use imfbo_core::kernel::Fidelity;
use imfbo_core::mean::{BaseForm, MeanModelSpec};
use imfbo_core::objectives::ObjectiveSpec;
use imfbo_core::report::{ground_truth, run_comparison, write_outputs, ComparisonPlan};
use imfbo_core::rng::{derive_seed, Stage};
use imfbo_service::{router, SessionManager};
use serde::de::DeserializeOwned;

use crate::{FidelityChoice, MeanChoice, ModeChoice, Preset};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<CampaignConfig> {
    let mut cfg: CampaignConfig = read_json(path)?;
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    let issues = cfg.issues();
    if !issues.is_empty() {
        let lines: Vec<String> = issues.iter().map(|i| format!("  {}: {}", i.field, i.message)).collect();
        bail!("invalid config {}:\n{}", path.display(), lines.join("\n"));
    }
    Ok(cfg)
}

pub fn preset_config(preset: Preset, mean: Option<MeanChoice>) -> CampaignConfig {
    let mean = mean.map(|m| match m {
        MeanChoice::Zero => MeanModelSpec::Zero,
        MeanChoice::Peak => MeanModelSpec::gaussian_peak(),
        MeanChoice::Piecewise => MeanModelSpec::piecewise(BaseForm::F1Form),
    });
    let mut cfg = match preset {
        Preset::Problem1 => CampaignConfig::problem1(),
        Preset::Problem2 => CampaignConfig::problem2(MeanModelSpec::Zero),
        Preset::Problem2Structured => CampaignConfig::problem2_structured(),
        Preset::IsingSquare => CampaignConfig::ising(ObjectiveSpec::ising_square(), MeanModelSpec::Zero),
        Preset::IsingTriangular => CampaignConfig::ising(ObjectiveSpec::ising_triangular_low(), MeanModelSpec::Zero),
    };
    if let Some(m) = mean {
        cfg.surrogate.mean = m;
    }
    cfg
}

pub fn config(preset: Preset, mean: Option<MeanChoice>, mode: ModeChoice, seed: u64) -> Result<()> {
    let mut cfg = preset_config(preset, mean).with_seed(seed);
    match mode {
        ModeChoice::Batch => {}
        ModeChoice::Interactive => cfg.mode = CampaignMode::Interactive,
        ModeChoice::Baseline => cfg = cfg.baseline_of(),
    }
    println!("{}", serde_json::to_string_pretty(&cfg)?);
    Ok(())
}

fn summarize(state: &CampaignState) {
    let (low, high) = state.suggested_counts();
    println!("status: {:?}", state.status);
    println!("iterations: {}", state.iteration);
    println!("suggested: {low} low, {high} high");
    println!("best: y = {} at x = {:?} (f = {})", state.best.y, state.best.x, state.best.f.index());
    if let Some(b) = state.best_high() {
        println!("best high fidelity: y = {} at x = {:?}", b.y, b.x);
    }
    if !state.policy_log.is_empty() {
        println!("policy changes: {}", state.policy_log.len());
    }
}

fn finish(state: &CampaignState, out: Option<&Path>) -> Result<()> {
    summarize(state);
    if let Some(path) = out {
        state.save(path).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn run(
    config: &Path,
    policy: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    mse: bool,
    truth_dir: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let policy: Option<ScriptedPolicy> = policy.map(read_json).transpose()?;
    let state = run_campaign(cfg, policy.as_ref())?;
    finish(&state, out)?;
    if mse {
        let truth = ground_truth(&state.initial_config, truth_dir, true)?;
        println!("mse: {}", compute_mse(&state, &truth, false)?.mse);
    }
    Ok(())
}

pub fn baseline(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let cfg = if cfg.is_baseline() { cfg } else { cfg.baseline_of() };
    let state = run_single_fidelity_baseline(cfg)?;
    finish(&state, out)
}

/// Grid `from, from + step, ...` up to `to` inclusive.
pub fn scan_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && from <= to && from.is_finite() && to.is_finite()) {
        bail!("scan range needs from <= to and step > 0");
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + i as f64 * step).collect())
}

pub fn scan(
    config: Option<&Path>,
    fidelity: FidelityChoice,
    (from, to, step): (f64, f64, f64),
    repeats: u64,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let objective = match config {
        Some(p) => read_json::<CampaignConfig>(p)?.objective,
        None => ObjectiveSpec::ising_square(),
    };
    objective.validate()?;
    let f = match fidelity {
        FidelityChoice::Low => Fidelity::Low,
        FidelityChoice::High => Fidelity::High,
    };
    let header = if matches!(objective, ObjectiveSpec::Ising { .. }) { ["J", "fidelity", "H_c", "seed"] } else { ["x", "fidelity", "y", "seed"] };
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header)?;
    for (i, x) in scan_grid(from, to, step)?.into_iter().enumerate() {
        for r in 0..repeats.max(1) {
            let run_seed = seed + r;
            let v = objective.evaluate(&[x], f, derive_seed(run_seed, Stage::GroundTruth, i as u64))?;
            w.write_record([x.to_string(), f.index().to_string(), v.to_string(), run_seed.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn serve(host: &str, port: u16, data_dir: Option<PathBuf>) -> Result<()> {
    let manager = match data_dir {
        Some(d) => SessionManager::open(d)?,
        None => SessionManager::in_memory(),
    };
    let app = router(Arc::new(manager));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        tracing::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}

/// Returns true when the replayed history matches.
pub fn replay(state_path: &Path, out: Option<&Path>) -> Result<bool> {
    let original = CampaignState::load(state_path).with_context(|| format!("loading {}", state_path.display()))?;
    let replayed = replay_campaign(&original)?;
    if let Some(p) = out {
        replayed.save(p)?;
    }
    let diff = history_diff(&original.history, &replayed.history);
    if diff.is_empty() && original.config == replayed.config {
        println!("identical: {} iterations, {} policy changes", replayed.iteration, replayed.policy_log.len());
        Ok(true)
    } else {
        for d in &diff {
            println!("differs: {d}");
        }
        if original.config != replayed.config {
            println!("differs: final config");
        }
        Ok(false)
    }
}

pub fn compare(plan: &Path, out: &Path, workers: usize) -> Result<()> {
    let plan: ComparisonPlan = read_json(plan)?;
    let result = run_comparison(&plan, workers)?;
    write_outputs(&result, out)?;
    for s in &result.report.summaries {
        let imp = s.improvement.map_or(String::new(), |v| format!(", improvement {:.1}%", v * 100.0));
        println!("{}: median mse {:.6} over {} runs{imp}", s.label, s.median_mse, s.runs);
    }
    println!("wrote {}", out.display());
    Ok(())
}
