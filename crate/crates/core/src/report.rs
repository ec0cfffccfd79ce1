//! Seeded multi-run comparisons.
//!
//! A plan lists labelled campaign configs and the seeds to run each with.
//! Every run is scored by the MSE of its final high-fidelity posterior mean
//! against a ground-truth curve. The report itself holds no timing data, so
//! re-running a plan reproduces it byte for byte; wall times are returned
//! separately.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::campaign::{
    candidate_grid, compute_mse, run, CampaignConfig, CampaignMode, GroundTruth, MseReport, ScriptedPolicy,
};
use crate::error::{Error, Result};
use crate::kernel::Fidelity;
use crate::objectives::ising::{simulate_heat_capacity, IsingConfig};
use crate::objectives::ObjectiveSpec;
use crate::rng::{self, Stage};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Seed for ground-truth scans; independent of any campaign seed.
pub const GROUND_TRUTH_SEED: u64 = 0x6a09_e667;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub label: String,
    pub config: CampaignConfig,
    pub seeds: Vec<u64>,
    /// Responses for interactive configs.
    #[serde(default)]
    pub policy: Option<ScriptedPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPlan {
    pub entries: Vec<PlanEntry>,
    /// Where Ising ground-truth scans are cached.
    #[serde(default)]
    pub ground_truth_dir: Option<PathBuf>,
    /// When false, a ground truth missing from the cache is an error.
    #[serde(default = "yes")]
    pub compute_ground_truth: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub label: String,
    pub seed: u64,
    pub mse: f64,
    /// Evaluations chosen by the loop, excluding the initial design.
    pub suggested_low: usize,
    pub suggested_high: usize,
    pub total_low: usize,
    pub total_high: usize,
    pub best_y: f64,
    pub best_high_y: Option<f64>,
    pub policy_changes: usize,
    /// `(m - mse) / m` against the mean baseline MSE `m`.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub label: String,
    pub runs: usize,
    pub baseline: bool,
    pub median_mse: f64,
    pub mean_mse: f64,
    pub median_suggested_low: f64,
    pub median_suggested_high: f64,
    /// Improvement of the median MSE over the mean baseline MSE.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub baseline_mean_mse: Option<f64>,
    pub rows: Vec<RunRow>,
    pub summaries: Vec<LabelSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTiming {
    pub label: String,
    pub seed: u64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOutput {
    pub report: ComparisonReport,
    /// Squared-error maps in row order.
    pub se_maps: Vec<MseReport>,
    pub timings: Vec<RunTiming>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn improvement(baseline_mean: f64, mse: f64) -> f64 {
    (baseline_mean - mse) / baseline_mean
}

/// Dense high-fidelity Ising scan on `grid`, one seeded simulation per point.
pub fn ising_scan(high: &IsingConfig, grid: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    grid.par_iter()
        .enumerate()
        .map(|(i, x)| simulate_heat_capacity(&high.with_coupling(x[0], rng::derive_seed(seed, Stage::GroundTruth, i as u64))))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CachedTruth {
    high: IsingConfig,
    seed: u64,
    truth: GroundTruth,
}

fn cache_path(dir: &Path, high: &IsingConfig, grid: &[Vec<f64>]) -> PathBuf {
    let (lo, hi) = (grid[0][0], grid[grid.len() - 1][0]);
    dir.join(format!(
        "ground_truth_{:?}_n{}_T{}_eq{}_ms{}_{}pts_{lo}_{hi}.json",
        high.lattice_kind,
        high.n,
        high.temperature,
        high.equil_sweeps,
        high.measure_sweeps,
        grid.len()
    )
    .to_lowercase())
}

/// High-fidelity reference over the config's evaluation grid. Analytic
/// objectives are exact; Ising truths are scanned once and cached in
/// `cache_dir` when given.
pub fn ground_truth(cfg: &CampaignConfig, cache_dir: Option<&Path>, compute_if_missing: bool) -> Result<GroundTruth> {
    let grid = candidate_grid(&cfg.domain, cfg.grid_resolution);
    match &cfg.objective {
        ObjectiveSpec::Analytic { .. } => {
            let values = grid
                .iter()
                .map(|x| cfg.objective.evaluate(x, Fidelity::High, 0))
                .collect::<Result<Vec<_>>>()?;
            Ok(GroundTruth { grid, values })
        }
        ObjectiveSpec::Ising { high, .. } => {
            let path = cache_dir.map(|d| cache_path(d, high, &grid));
            if let Some(p) = path.as_ref().filter(|p| p.exists()) {
                let cached: CachedTruth = serde_json::from_str(&std::fs::read_to_string(p)?)?;
                let fresh = cached.high == high.with_coupling(cached.high.j_coupling, cached.high.rng_seed)
                    && cached.seed == GROUND_TRUTH_SEED
                    && cached.truth.grid == grid;
                if fresh {
                    return Ok(cached.truth);
                }
            }
            if !compute_if_missing {
                return Err(Error::MissingGroundTruth(cfg.objective.name()));
            }
            let values = ising_scan(high, &grid, GROUND_TRUTH_SEED)?;
            let truth = GroundTruth { grid, values };
            if let Some(p) = path {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                let doc = CachedTruth { high: high.clone(), seed: GROUND_TRUTH_SEED, truth: truth.clone() };
                std::fs::write(&p, serde_json::to_string(&doc)?)?;
            }
            Ok(truth)
        }
    }
}

fn truth_key(cfg: &CampaignConfig) -> Result<String> {
    let objective = match &cfg.objective {
        ObjectiveSpec::Ising { high, .. } => serde_json::to_string(&high.with_coupling(0.0, 0))?,
        other => serde_json::to_string(other)?,
    };
    Ok(format!("{objective}|{:?}|{}", cfg.domain, cfg.grid_resolution))
}

/// Runs every `(entry, seed)` pair on a pool of `workers` threads.
pub fn run_comparison(plan: &ComparisonPlan, workers: usize) -> Result<ComparisonOutput> {
    if plan.entries.is_empty() {
        return Err(Error::config("entries", "plan has no entries"));
    }
    for e in &plan.entries {
        e.config.validate().map_err(|err| Error::config(&format!("entries[{}].config", e.label), err.to_string()))?;
        if e.seeds.is_empty() {
            return Err(Error::config(&format!("entries[{}].seeds", e.label), "no seeds"));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;

    pool.install(|| {
        let mut truths: BTreeMap<String, GroundTruth> = BTreeMap::new();
        for e in &plan.entries {
            let key = truth_key(&e.config)?;
            if !truths.contains_key(&key) {
                let t = ground_truth(&e.config, plan.ground_truth_dir.as_deref(), plan.compute_ground_truth)?;
                truths.insert(key, t);
            }
        }

        let jobs: Vec<(&PlanEntry, u64)> =
            plan.entries.iter().flat_map(|e| e.seeds.iter().map(move |&s| (e, s))).collect();
        let results: Vec<(RunRow, MseReport, f64)> = jobs
            .par_iter()
            .map(|&(entry, seed)| {
                let started = Instant::now();
                let cfg = entry.config.clone().with_seed(seed);
                let state = run(cfg, entry.policy.as_ref())?;
                let truth = &truths[&truth_key(&entry.config)?];
                let se = compute_mse(&state, truth, false)?;
                let (suggested_low, suggested_high) = state.suggested_counts();
                let (total_low, total_high) = state.fidelity_counts();
                let row = RunRow {
                    label: entry.label.clone(),
                    seed,
                    mse: se.mse,
                    suggested_low,
                    suggested_high,
                    total_low,
                    total_high,
                    best_y: state.best.y,
                    best_high_y: state.best_high().map(|b| b.y),
                    policy_changes: state.policy_log.len(),
                    improvement: None,
                };
                Ok((row, se, started.elapsed().as_secs_f64() * 1e3))
            })
            .collect::<Result<Vec<_>>>()?;

        let is_baseline = |label: &str| {
            plan.entries.iter().any(|e| e.label == label && e.config.mode == CampaignMode::SingleFidelityBaseline)
        };
        let baseline_mses: Vec<f64> = results.iter().filter(|r| is_baseline(&r.0.label)).map(|r| r.0.mse).collect();
        let baseline_mean_mse =
            (!baseline_mses.is_empty()).then(|| baseline_mses.iter().sum::<f64>() / baseline_mses.len() as f64);

        let mut rows = Vec::with_capacity(results.len());
        let mut se_maps = Vec::with_capacity(results.len());
        let mut timings = Vec::with_capacity(results.len());
        for (mut row, se, ms) in results {
            row.improvement = baseline_mean_mse.map(|m| improvement(m, row.mse));
            timings.push(RunTiming { label: row.label.clone(), seed: row.seed, wall_time_ms: ms });
            rows.push(row);
            se_maps.push(se);
        }

        let mut summaries = Vec::new();
        for e in &plan.entries {
            if summaries.iter().any(|s: &LabelSummary| s.label == e.label) {
                continue;
            }
            let mine: Vec<&RunRow> = rows.iter().filter(|r| r.label == e.label).collect();
            let mses: Vec<f64> = mine.iter().map(|r| r.mse).collect();
            let lows: Vec<f64> = mine.iter().map(|r| r.suggested_low as f64).collect();
            let highs: Vec<f64> = mine.iter().map(|r| r.suggested_high as f64).collect();
            let median_mse = median(&mses);
            summaries.push(LabelSummary {
                label: e.label.clone(),
                runs: mine.len(),
                baseline: is_baseline(&e.label),
                median_mse,
                mean_mse: mses.iter().sum::<f64>() / mses.len() as f64,
                median_suggested_low: median(&lows),
                median_suggested_high: median(&highs),
                improvement: baseline_mean_mse.map(|m| improvement(m, median_mse)),
            });
        }

        Ok(ComparisonOutput {
            report: ComparisonReport { schema_version: REPORT_SCHEMA_VERSION, baseline_mean_mse, rows, summaries },
            se_maps,
            timings,
        })
    })
}

fn file_safe(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Writes `report_path`, per-run squared-error maps under
/// `<stem>_se_maps/`, and wall times to `<stem>_timings.csv`.
pub fn write_outputs(out: &ComparisonOutput, report_path: &Path) -> Result<()> {
    let dir = report_path.parent().unwrap_or_else(|| Path::new("."));
    let stem = report_path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    std::fs::create_dir_all(dir)?;
    std::fs::write(report_path, serde_json::to_string_pretty(&out.report)?)?;

    let maps = dir.join(format!("{stem}_se_maps"));
    std::fs::create_dir_all(&maps)?;
    for (row, se) in out.report.rows.iter().zip(&out.se_maps) {
        let mut w = csv::Writer::from_path(maps.join(format!("{}_seed{}.csv", file_safe(&row.label), row.seed)))?;
        w.write_record(["x", "truth", "mean", "squared_error"])?;
        for i in 0..se.grid.len() {
            w.write_record([
                se.grid[i][0].to_string(),
                se.truth[i].to_string(),
                se.predicted[i].to_string(),
                se.per_point_se[i].to_string(),
            ])?;
        }
        w.flush()?;
    }

    let mut w = csv::Writer::from_path(dir.join(format!("{stem}_timings.csv")))?;
    w.write_record(["label", "seed", "wall_time_ms"])?;
    for t in &out.timings {
        w.write_record([t.label.clone(), t.seed.to_string(), format!("{:.1}", t.wall_time_ms)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::McmcConfig;

    fn quick_p1() -> CampaignConfig {
        let mut cfg = CampaignConfig::problem1();
        cfg.surrogate.mcmc = McmcConfig { warmup: 40, samples: 20, ..McmcConfig::default() };
        cfg.grid_resolution = 41;
        cfg.max_iterations = 2;
        cfg
    }

    fn plan(entries: Vec<PlanEntry>) -> ComparisonPlan {
        ComparisonPlan { entries, ground_truth_dir: None, compute_ground_truth: true }
    }

    #[test]
    fn improvement_sign() {
        assert_eq!(improvement(4.0, 1.0), 0.75);
        assert_eq!(improvement(2.0, 5.0), -1.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn single_row_without_baseline() {
        let p = plan(vec![PlanEntry { label: "mfbo".into(), config: quick_p1(), seeds: vec![1], policy: None }]);
        let out = run_comparison(&p, 1).unwrap();
        assert_eq!(out.report.rows.len(), 1);
        assert!(out.report.rows[0].improvement.is_none());
        assert!(out.report.summaries[0].improvement.is_none());
        assert_eq!(out.report.rows[0].suggested_low + out.report.rows[0].suggested_high, 2);
    }

    #[test]
    fn identical_labels_identical_results_and_bytes() {
        let e = |label: &str| PlanEntry { label: label.into(), config: quick_p1(), seeds: vec![3, 4], policy: None };
        let mut entries = vec![e("a"), e("b")];
        entries.push(PlanEntry { label: "bo".into(), config: quick_p1().baseline_of(), seeds: vec![3], policy: None });
        let p = plan(entries);
        let one = run_comparison(&p, 2).unwrap();
        let two = run_comparison(&p, 1).unwrap();
        let a: Vec<f64> = one.report.rows.iter().filter(|r| r.label == "a").map(|r| r.mse).collect();
        let b: Vec<f64> = one.report.rows.iter().filter(|r| r.label == "b").map(|r| r.mse).collect();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&one.report).unwrap(),
            serde_json::to_string(&two.report).unwrap()
        );
        let m = one.report.baseline_mean_mse.unwrap();
        for r in &one.report.rows {
            assert_eq!(r.improvement, Some((m - r.mse) / m));
        }
    }

    #[test]
    fn missing_ising_truth_names_objective() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = CampaignConfig::ising(ObjectiveSpec::ising_square(), Default::default());
        cfg.grid_resolution = 5;
        match ground_truth(&cfg, Some(dir.path()), false) {
            Err(Error::MissingGroundTruth(name)) => assert_eq!(name, "ising_square60_square20"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ising_truth_is_cached() {
        let dir = tempfile::tempdir().unwrap();
        let mut high = IsingConfig::square(6);
        high.equil_sweeps = 5;
        high.measure_sweeps = 5;
        let objective = ObjectiveSpec::Ising { low: IsingConfig::square(4), high };
        let mut cfg = CampaignConfig::ising(objective, Default::default());
        cfg.grid_resolution = 4;
        let first = ground_truth(&cfg, Some(dir.path()), true).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let second = ground_truth(&cfg, Some(dir.path()), false).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn outputs_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = plan(vec![PlanEntry { label: "m f".into(), config: quick_p1(), seeds: vec![1], policy: None }]);
        let out = run_comparison(&p, 1).unwrap();
        let path = dir.path().join("report.json");
        write_outputs(&out, &path).unwrap();
        assert!(path.exists());
        assert!(dir.path().join("report_se_maps/m_f_seed1.csv").exists());
        assert!(dir.path().join("report_timings.csv").exists());
    }
}
