//! Prior distributions for kernel hyperparameters and mean-model parameters.
//!
//! Each prior knows how to map its support onto the real line so the MCMC
//! sampler can work in an unconstrained space: identity for `Normal`, log for
//! `HalfNormal`, logit for `Uniform`. A `Uniform` with `lo == hi` is a point
//! mass and is held fixed by the sampler.

use rand::Rng;
use rand_distr::{Distribution, Normal as NormalDist, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorDistribution {
    Normal { mu: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    HalfNormal { scale: f64 },
}

impl PriorDistribution {
    pub fn normal(mu: f64, sd: f64) -> Self {
        PriorDistribution::Normal { mu, sd }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        PriorDistribution::Uniform { lo, hi }
    }

    pub fn half_normal(scale: f64) -> Self {
        PriorDistribution::HalfNormal { scale }
    }

    pub fn point_mass(v: f64) -> Self {
        PriorDistribution::Uniform { lo: v, hi: v }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            PriorDistribution::Normal { mu, sd } => mu.is_finite() && sd > 0.0 && sd.is_finite(),
            PriorDistribution::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            PriorDistribution::HalfNormal { scale } => scale > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(name, format!("invalid prior {self:?}")))
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(*self, PriorDistribution::Uniform { lo, hi } if lo == hi)
    }

    /// Smallest value in the support (for positivity checks).
    pub fn support_min(&self) -> f64 {
        match *self {
            PriorDistribution::Normal { .. } => f64::NEG_INFINITY,
            PriorDistribution::Uniform { lo, .. } => lo,
            PriorDistribution::HalfNormal { .. } => 0.0,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match *self {
            PriorDistribution::Normal { .. } => v.is_finite(),
            PriorDistribution::Uniform { lo, hi } => v >= lo && v <= hi,
            PriorDistribution::HalfNormal { .. } => v >= 0.0 && v.is_finite(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PriorDistribution::Normal { mu, sd } => NormalDist::new(mu, sd)
                .expect("validated normal prior")
                .sample(rng),
            PriorDistribution::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    lo + (hi - lo) * rng.random::<f64>()
                }
            }
            PriorDistribution::HalfNormal { scale } => {
                let z: f64 = StandardNormal.sample(rng);
                scale * z.abs()
            }
        }
    }

    /// Log density (up to nothing: normalized) at `v`; `-inf` outside support.
    pub fn ln_pdf(&self, v: f64) -> f64 {
        if !self.contains(v) {
            return f64::NEG_INFINITY;
        }
        match *self {
            PriorDistribution::Normal { mu, sd } => {
                let z = (v - mu) / sd;
                -0.5 * z * z - sd.ln() - LN_SQRT_2PI
            }
            PriorDistribution::Uniform { lo, hi } => {
                if lo == hi {
                    0.0
                } else {
                    -(hi - lo).ln()
                }
            }
            PriorDistribution::HalfNormal { scale } => {
                let z = v / scale;
                -0.5 * z * z - scale.ln() - LN_SQRT_2PI + std::f64::consts::LN_2
            }
        }
    }

    /// Maps a value in the support to the unconstrained real line.
    pub fn to_unconstrained(&self, v: f64) -> f64 {
        match *self {
            PriorDistribution::Normal { .. } => v,
            PriorDistribution::Uniform { lo, hi } => {
                if lo == hi {
                    0.0
                } else {
                    let u = ((v - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
                    (u / (1.0 - u)).ln()
                }
            }
            PriorDistribution::HalfNormal { .. } => v.max(1e-300).ln(),
        }
    }

    /// Inverse of [`Self::to_unconstrained`], returning the constrained value
    /// and `ln |dv/dz|`.
    pub fn from_unconstrained(&self, z: f64) -> (f64, f64) {
        match *self {
            PriorDistribution::Normal { .. } => (z, 0.0),
            PriorDistribution::Uniform { lo, hi } => {
                if lo == hi {
                    return (lo, 0.0);
                }
                let width = hi - lo;
                let s = sigmoid(z);
                // ln(s(1-s)) = -softplus(-z) - softplus(z)
                let ln_jac = width.ln() - softplus(-z) - softplus(z);
                (lo + width * s, ln_jac)
            }
            PriorDistribution::HalfNormal { .. } => (z.exp(), z),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PriorDistribution::Normal { mu, .. } => mu,
            PriorDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            PriorDistribution::HalfNormal { scale } => scale * (2.0 / std::f64::consts::PI).sqrt(),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}
