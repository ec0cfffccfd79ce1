use serde::{Deserialize, Serialize};

use super::{candidate_grid, CampaignState};
use crate::error::{Error, Result};
use crate::gp::{fit_mcmc, predict, PosteriorPrediction};
use crate::rng::{self, Stage};

/// Reference high-fidelity values on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub grid: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub mse: f64,
    pub grid: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
    pub predicted: Vec<f64>,
    pub per_point_se: Vec<f64>,
}

/// Fits on all data and predicts over the evaluation grid: the initial
/// domain at the configured resolution, so runs that reshaped their search
/// space are still scored on the same points.
pub fn final_prediction(state: &CampaignState) -> Result<PosteriorPrediction> {
    let cfg = &state.config;
    let grid = candidate_grid(&state.initial_config.domain, cfg.grid_resolution);
    let spec = cfg.model_spec();
    let seed = rng::derive_seed(cfg.rng_seed, Stage::FinalFit, state.iteration as u64);
    let draws = fit_mcmc(&state.dataset, &spec, &cfg.surrogate.mcmc, seed)?;
    predict(&state.dataset, &draws, &spec.mean, &grid)
}

fn same_grid(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(p, q)| p.len() == q.len() && p.iter().zip(q).all(|(u, v)| (u - v).abs() <= 1e-12))
}

/// Linear interpolation of a 1-D truth curve onto `at`.
fn interpolate(truth: &GroundTruth, at: &[Vec<f64>]) -> Result<Vec<f64>> {
    if truth.grid.iter().chain(at).any(|p| p.len() != 1) {
        return Err(Error::GridMismatch("interpolation is one-dimensional only".into()));
    }
    let xs: Vec<f64> = truth.grid.iter().map(|p| p[0]).collect();
    if xs.len() < 2 || xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::GridMismatch("truth grid must be strictly increasing with >= 2 points".into()));
    }
    at.iter()
        .map(|p| {
            let x = p[0];
            let (lo, hi) = (xs[0], xs[xs.len() - 1]);
            if x < lo - 1e-12 || x > hi + 1e-12 {
                return Err(Error::GridMismatch(format!("{x} lies outside the truth grid [{lo}, {hi}]")));
            }
            let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
            let t = ((x - xs[i - 1]) / (xs[i] - xs[i - 1])).clamp(0.0, 1.0);
            Ok(truth.values[i - 1] + t * (truth.values[i] - truth.values[i - 1]))
        })
        .collect()
}

/// Squared error of the high-fidelity posterior mean against `truth`.
pub fn mse_against(pred: &PosteriorPrediction, truth: &GroundTruth, allow_interpolation: bool) -> Result<MseReport> {
    if truth.grid.len() != truth.values.len() {
        return Err(Error::GridMismatch("truth grid and values differ in length".into()));
    }
    let reference = if same_grid(&pred.grid, &truth.grid) {
        truth.values.clone()
    } else if allow_interpolation {
        interpolate(truth, &pred.grid)?
    } else {
        return Err(Error::GridMismatch(format!(
            "prediction grid ({} points) differs from the truth grid ({} points) and interpolation is off",
            pred.grid.len(),
            truth.grid.len()
        )));
    };
    let per_point_se: Vec<f64> = pred.mu_hf.iter().zip(&reference).map(|(m, t)| (m - t) * (m - t)).collect();
    let mse = per_point_se.iter().sum::<f64>() / per_point_se.len() as f64;
    Ok(MseReport {
        mse,
        grid: pred.grid.clone(),
        truth: reference,
        predicted: pred.mu_hf.clone(),
        per_point_se,
    })
}

pub fn compute_mse(state: &CampaignState, truth: &GroundTruth, allow_interpolation: bool) -> Result<MseReport> {
    mse_against(&final_prediction(state)?, truth, allow_interpolation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(grid: Vec<f64>, mu: Vec<f64>) -> PosteriorPrediction {
        let n = grid.len();
        PosteriorPrediction {
            grid: grid.into_iter().map(|x| vec![x]).collect(),
            mu_hf: mu.clone(),
            var_hf: vec![0.0; n],
            mu_lf: mu,
            var_lf: vec![0.0; n],
        }
    }

    #[test]
    fn exact_and_offset() {
        let xs = vec![0.0, 0.5, 1.0];
        let truth = GroundTruth { grid: xs.iter().map(|&x| vec![x]).collect(), values: vec![1.0, 2.0, 3.0] };
        assert_eq!(mse_against(&pred(xs.clone(), vec![1.0, 2.0, 3.0]), &truth, false).unwrap().mse, 0.0);
        let r = mse_against(&pred(xs, vec![1.1, 2.1, 3.1]), &truth, false).unwrap();
        assert!((r.mse - 0.01).abs() < 1e-12);
    }

    #[test]
    fn mismatch_needs_interpolation() {
        let truth = GroundTruth { grid: vec![vec![0.0], vec![1.0]], values: vec![0.0, 2.0] };
        let p = pred(vec![0.25, 0.5], vec![0.5, 1.0]);
        assert!(matches!(mse_against(&p, &truth, false), Err(Error::GridMismatch(_))));
        let r = mse_against(&p, &truth, true).unwrap();
        assert_eq!(r.truth, vec![0.5, 1.0]);
        assert_eq!(r.mse, 0.0);
        let outside = pred(vec![1.5], vec![0.0]);
        assert!(mse_against(&outside, &truth, true).is_err());
    }
}
