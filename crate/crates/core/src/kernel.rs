//! Multi-fidelity covariance.
//!
//! The covariance between two `(x, f)` pairs is the product of an overall
//! variance, a spatial correlation over inputs and an exponential
//! correlation over fidelity labels:
//!
//! ```text
//! cov((xi, fi), (xj, fj)) = sigma2 * R(xi, xj) * exp(-delta * |fi - fj|)
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter added before every factorization.
pub const JITTER: f64 = 1e-6;

/// Two-level fidelity label. Serialized as `0` (low) or `1` (high).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Fidelity {
    Low,
    High,
}

impl Fidelity {
    pub fn index(self) -> u8 {
        match self {
            Fidelity::Low => 0,
            Fidelity::High => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.index())
    }
}

impl From<Fidelity> for u8 {
    fn from(f: Fidelity) -> u8 {
        f.index()
    }
}

impl TryFrom<u8> for Fidelity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Fidelity::Low),
            1 => Ok(Fidelity::High),
            other => Err(format!("fidelity label must be 0 or 1, got {other}")),
        }
    }
}

impl std::fmt::Display for Fidelity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// An input location tagged with the fidelity it is (or would be) evaluated at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityPoint {
    pub x: Vec<f64>,
    pub f: Fidelity,
}

impl FidelityPoint {
    pub fn new(x: Vec<f64>, f: Fidelity) -> Self {
        Self { x, f }
    }

    pub fn scalar(x: f64, f: Fidelity) -> Self {
        Self { x: vec![x], f }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SpatialFamily {
    #[default]
    Rbf,
    Matern52,
}

/// How fidelity labels enter the covariance.
///
/// `Constant` drops the fidelity factor entirely, which turns the model into
/// an ordinary single-fidelity GP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FidelityCoupling {
    #[default]
    Exponential,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperParams {
    pub sigma2: f64,
    pub length_scales: Vec<f64>,
    pub delta: f64,
    pub noise2: f64,
    pub spatial_family: SpatialFamily,
    #[serde(default)]
    pub coupling: FidelityCoupling,
}

impl KernelHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::param("sigma2", format!("must be > 0, got {}", self.sigma2)));
        }
        check_length_scales(&self.length_scales)?;
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::param("delta", format!("must be > 0, got {}", self.delta)));
        }
        if !(self.noise2 >= 0.0 && self.noise2.is_finite()) {
            return Err(Error::param("noise2", format!("must be >= 0, got {}", self.noise2)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }
}

fn check_length_scales(theta: &[f64]) -> Result<()> {
    if theta.is_empty() {
        return Err(Error::param("length_scales", "at least one length scale is required"));
    }
    if let Some(bad) = theta.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::param("length_scales", format!("every entry must be > 0, got {bad}")));
    }
    Ok(())
}

fn check_dims(xi: &[f64], xj: &[f64], theta: &[f64]) -> Result<()> {
    if xi.len() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), actual: xi.len() });
    }
    if xj.len() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), actual: xj.len() });
    }
    check_length_scales(theta)
}

#[inline]
fn rbf_unchecked(xi: &[f64], xj: &[f64], theta: &[f64]) -> f64 {
    let s: f64 = xi
        .iter()
        .zip(xj)
        .zip(theta)
        .map(|((a, b), t)| {
            let d = (a - b) / t;
            d * d
        })
        .sum();
    (-0.5 * s).exp()
}

/// Matérn-5/2 over the scaled Euclidean distance `r = sqrt(sum (dx/theta)^2)`.
#[inline]
fn matern52_unchecked(xi: &[f64], xj: &[f64], theta: &[f64]) -> f64 {
    let r2: f64 = xi
        .iter()
        .zip(xj)
        .zip(theta)
        .map(|((a, b), t)| {
            let d = (a - b) / t;
            d * d
        })
        .sum();
    let r = r2.sqrt();
    let s5 = 5f64.sqrt();
    (-s5 * r).exp() * (1.0 + s5 * r + 5.0 / 3.0 * r2)
}

/// Squared-exponential correlation `exp(-0.5 * sum (dx/theta)^2)`.
pub fn spatial_rbf(xi: &[f64], xj: &[f64], theta: &[f64]) -> Result<f64> {
    check_dims(xi, xj, theta)?;
    Ok(rbf_unchecked(xi, xj, theta))
}

/// Matérn-5/2 correlation over scaled per-dimension distances.
pub fn spatial_matern52(xi: &[f64], xj: &[f64], theta: &[f64]) -> Result<f64> {
    check_dims(xi, xj, theta)?;
    Ok(matern52_unchecked(xi, xj, theta))
}

/// Fidelity correlation `exp(-delta * |fi - fj|)`.
pub fn fidelity_kernel(fi: Fidelity, fj: Fidelity, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::param("delta", format!("must be > 0, got {delta}")));
    }
    Ok(fidelity_unchecked(fi, fj, delta))
}

#[inline]
fn fidelity_unchecked(fi: Fidelity, fj: Fidelity, delta: f64) -> f64 {
    if fi == fj {
        1.0
    } else {
        (-delta).exp()
    }
}

#[inline]
pub(crate) fn cov_unchecked(pi: &FidelityPoint, pj: &FidelityPoint, hp: &KernelHyperParams) -> f64 {
    let r = match hp.spatial_family {
        SpatialFamily::Rbf => rbf_unchecked(&pi.x, &pj.x, &hp.length_scales),
        SpatialFamily::Matern52 => matern52_unchecked(&pi.x, &pj.x, &hp.length_scales),
    };
    let kf = match hp.coupling {
        FidelityCoupling::Exponential => fidelity_unchecked(pi.f, pj.f, hp.delta),
        FidelityCoupling::Constant => 1.0,
    };
    hp.sigma2 * r * kf
}

pub fn mf_covariance(pi: &FidelityPoint, pj: &FidelityPoint, hp: &KernelHyperParams) -> Result<f64> {
    hp.validate()?;
    check_dims(&pi.x, &pj.x, &hp.length_scales)?;
    Ok(cov_unchecked(pi, pj, hp))
}

/// Dense covariance over `points`. With `include_noise`, `noise2 + JITTER`
/// is added to the diagonal.
pub fn covariance_matrix(
    points: &[FidelityPoint],
    hp: &KernelHyperParams,
    include_noise: bool,
) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::Dataset("covariance matrix needs at least one point".into()));
    }
    hp.validate()?;
    for p in points {
        if p.dim() != hp.dim() {
            return Err(Error::DimensionMismatch { expected: hp.dim(), actual: p.dim() });
        }
    }
    Ok(covariance_matrix_unchecked(points, hp, include_noise))
}

pub(crate) fn covariance_matrix_unchecked(
    points: &[FidelityPoint],
    hp: &KernelHyperParams,
    include_noise: bool,
) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = cov_unchecked(&points[i], &points[j], hp);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    if include_noise {
        for i in 0..n {
            k[(i, i)] += hp.noise2 + JITTER;
        }
    }
    k
}

/// Cross covariance between `rows` and `cols` (no noise).
pub(crate) fn cross_covariance(
    rows: &[FidelityPoint],
    cols: &[FidelityPoint],
    hp: &KernelHyperParams,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| cov_unchecked(&rows[i], &cols[j], hp))
}
