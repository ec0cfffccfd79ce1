//! Cost-aware multi-fidelity expected improvement.
//!
//! High fidelity is scored by `EI_hf / C`; low fidelity by the absolute gap
//! `|EI_hf - EI_lf|`. The next experiment is the `(x, f)` pair with the
//! largest score across both curves.

use rand::Rng;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::gp::PosteriorPrediction;
use crate::kernel::Fidelity;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    /// Exploration margin.
    pub xi: f64,
    /// Effective high/low cost ratio used to discount high-fidelity EI.
    pub cost_ratio: f64,
    /// Scaling applied when the ratio is derived from runtimes.
    #[serde(default = "default_tweak")]
    pub tweak: f64,
}

fn default_tweak() -> f64 {
    1.0
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            xi: 0.01,
            cost_ratio: 1.0,
            tweak: 1.0,
        }
    }
}

impl AcquisitionConfig {
    pub fn with_cost_ratio(cost_ratio: f64) -> Self {
        AcquisitionConfig { cost_ratio, ..Default::default() }
    }

    /// `C = (t_high / t_low) * tweak`.
    pub fn from_runtimes(t_high: f64, t_low: f64, tweak: f64) -> Result<Self> {
        if !(t_high > 0.0 && t_low > 0.0) {
            return Err(Error::param("runtimes", "must both be positive"));
        }
        let cfg = AcquisitionConfig {
            xi: 0.01,
            cost_ratio: t_high / t_low * tweak,
            tweak,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::config("acquisition.xi", "must be >= 0"));
        }
        if !(self.cost_ratio > 0.0 && self.cost_ratio.is_finite()) {
            return Err(Error::config("acquisition.cost_ratio", "must be > 0"));
        }
        if !(self.tweak > 0.0 && self.tweak <= 1.0) {
            return Err(Error::config("acquisition.tweak", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form `E[max(0, Y - y_best - xi)]` for `Y ~ N(mu, sigma^2)`.
/// Returns exactly zero when `sigma == 0`.
pub fn expected_improvement(mu: f64, sigma: f64, y_best: f64, xi: f64) -> Result<f64> {
    if sigma < 0.0 || sigma.is_nan() {
        return Err(Error::param("sigma", format!("must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let imp = mu - y_best - xi;
    let z = imp / sigma;
    let ei = imp * std_normal_cdf(z) + sigma * std_normal_pdf(z);
    Ok(ei.max(0.0))
}

/// Acquisition values over the candidate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionCurves {
    pub ei_hf: Vec<f64>,
    pub ei_lf: Vec<f64>,
    /// `u(x, 1) = EI_hf / C`.
    pub u_hf: Vec<f64>,
    /// `u(x, 0) = |EI_hf - EI_lf|`.
    pub u_lf: Vec<f64>,
}

impl AcquisitionCurves {
    pub fn len(&self) -> usize {
        self.u_hf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_hf.is_empty()
    }

    pub fn curve(&self, f: Fidelity) -> &[f64] {
        match f {
            Fidelity::High => &self.u_hf,
            Fidelity::Low => &self.u_lf,
        }
    }
}

pub fn mf_acquisition(pred: &PosteriorPrediction, y_best: f64, cfg: &AcquisitionConfig) -> Result<AcquisitionCurves> {
    cfg.validate()?;
    let n = pred.len();
    if [pred.mu_hf.len(), pred.var_hf.len(), pred.mu_lf.len(), pred.var_lf.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::GridMismatch("prediction vectors are not aligned with the grid".into()));
    }
    let mut out = AcquisitionCurves {
        ei_hf: Vec::with_capacity(n),
        ei_lf: Vec::with_capacity(n),
        u_hf: Vec::with_capacity(n),
        u_lf: Vec::with_capacity(n),
    };
    for i in 0..n {
        let hf = expected_improvement(pred.mu_hf[i], pred.var_hf[i].max(0.0).sqrt(), y_best, cfg.xi)?;
        let lf = expected_improvement(pred.mu_lf[i], pred.var_lf[i].max(0.0).sqrt(), y_best, cfg.xi)?;
        out.ei_hf.push(hf);
        out.ei_lf.push(lf);
        out.u_hf.push(hf / cfg.cost_ratio);
        out.u_lf.push((hf - lf).abs());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TieRule {
    /// Cheaper fidelity first, then the smallest grid coordinate.
    #[default]
    LowFidelityFirst,
    HighFidelityFirst,
}

/// Which grid entries may still be proposed, per fidelity.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMask {
    pub high: Vec<bool>,
    pub low: Vec<bool>,
}

impl CandidateMask {
    pub fn all(n: usize) -> Self {
        CandidateMask { high: vec![true; n], low: vec![true; n] }
    }

    pub fn allowed(&self, f: Fidelity) -> &[bool] {
        match f {
            Fidelity::High => &self.high,
            Fidelity::Low => &self.low,
        }
    }

    pub fn disable(&mut self, f: Fidelity) {
        let v = match f {
            Fidelity::High => &mut self.high,
            Fidelity::Low => &mut self.low,
        };
        v.iter_mut().for_each(|b| *b = false);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub x: Vec<f64>,
    pub f: Fidelity,
    pub value: f64,
    /// True when every allowed acquisition value was zero and the point was
    /// drawn at random instead.
    pub fallback: bool,
}

/// Picks the `(x, f)` maximizing the acquisition across both curves.
///
/// Ties go by `tie_rule` and then by grid order (grids are generated in
/// ascending coordinate order). When no allowed value is positive, a uniformly
/// random allowed grid point at `fallback_fidelity` is returned with
/// `fallback = true`.
pub fn select_next<R: Rng + ?Sized>(
    curves: &AcquisitionCurves,
    grid: &[Vec<f64>],
    mask: &CandidateMask,
    tie_rule: TieRule,
    fallback_fidelity: Fidelity,
    rng: &mut R,
) -> Result<Selection> {
    let n = grid.len();
    if n == 0 {
        return Err(Error::GridMismatch("no candidate points available".into()));
    }
    if curves.len() != n || curves.u_lf.len() != n || mask.high.len() != n || mask.low.len() != n {
        return Err(Error::GridMismatch("acquisition curves, mask and grid differ in length".into()));
    }
    let order = match tie_rule {
        TieRule::LowFidelityFirst => [Fidelity::Low, Fidelity::High],
        TieRule::HighFidelityFirst => [Fidelity::High, Fidelity::Low],
    };
    let mut best: Option<(usize, Fidelity, f64)> = None;
    for f in order {
        for (i, (&u, &ok)) in curves.curve(f).iter().zip(mask.allowed(f)).enumerate() {
            if !ok || !u.is_finite() {
                continue;
            }
            if best.is_none_or(|(_, _, b)| u > b) {
                best = Some((i, f, u));
            }
        }
    }
    match best {
        Some((index, f, value)) if value > 0.0 => Ok(Selection {
            index,
            x: grid[index].clone(),
            f,
            value,
            fallback: false,
        }),
        _ => {
            let mut allowed: Vec<usize> = (0..n).filter(|&i| mask.allowed(fallback_fidelity)[i]).collect();
            if allowed.is_empty() {
                allowed = (0..n).collect();
            }
            let index = allowed[rng.random_range(0..allowed.len())];
            Ok(Selection {
                index,
                x: grid[index].clone(),
                f: fallback_fidelity,
                value: 0.0,
                fallback: true,
            })
        }
    }
}
