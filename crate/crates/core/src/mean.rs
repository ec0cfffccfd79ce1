//! Structured mean functions for the GP prior.
//!
//! `Zero` gives the ordinary data-driven MFGP. `PiecewiseOffset` encodes a
//! known discontinuity of unknown location: `f(x) - a` left of `c` and
//! `f(x) - b` from `c` on. `GaussianPeak` encodes a single peak of height `a`,
//! location `b` and width `c`. The same mean is shared by both fidelity
//! levels; the fidelity kernel models how the levels deviate from it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::analytic::problem1_high;
use crate::prior::PriorDistribution;

/// Base curve for the piecewise-offset model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseForm {
    /// `-(x+1)^2 * sin(2x+2)/5 + 1 + x/3`, the analytic test ground truth.
    F1Form,
    /// `x^2`, a deliberately wrong functional form.
    Quadratic,
}

impl BaseForm {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            BaseForm::F1Form => problem1_high(x),
            BaseForm::Quadratic => x * x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanPriors {
    pub a: PriorDistribution,
    pub b: PriorDistribution,
    pub c: PriorDistribution,
}

impl MeanPriors {
    pub fn as_array(&self) -> [PriorDistribution; 3] {
        [self.a, self.b, self.c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MeanParams {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanModelSpec {
    #[default]
    Zero,
    PiecewiseOffset {
        base_form: BaseForm,
        priors: MeanPriors,
    },
    GaussianPeak {
        priors: MeanPriors,
    },
}

impl MeanModelSpec {
    /// Discontinuity model with the analytic test-problem priors
    /// `a ~ N(0, 1)`, `b ~ N(15, 2)`, `c ~ U(5, 10)`.
    pub fn piecewise(base_form: BaseForm) -> Self {
        MeanModelSpec::PiecewiseOffset {
            base_form,
            priors: MeanPriors {
                a: PriorDistribution::normal(0.0, 1.0),
                b: PriorDistribution::normal(15.0, 2.0),
                c: PriorDistribution::uniform(5.0, 10.0),
            },
        }
    }

    /// Peak model with the heat-capacity priors `a ~ HalfN(0.5)`,
    /// `b ~ HalfN(1.17)`, `c ~ HalfN(2)`.
    pub fn gaussian_peak() -> Self {
        MeanModelSpec::GaussianPeak {
            priors: MeanPriors {
                a: PriorDistribution::half_normal(0.5),
                b: PriorDistribution::half_normal(1.17),
                c: PriorDistribution::half_normal(2.0),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, MeanModelSpec::Zero)
    }

    pub fn priors(&self) -> Option<&MeanPriors> {
        match self {
            MeanModelSpec::Zero => None,
            MeanModelSpec::PiecewiseOffset { priors, .. } | MeanModelSpec::GaussianPeak { priors } => {
                Some(priors)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MeanModelSpec::Zero => "zero",
            MeanModelSpec::PiecewiseOffset { .. } => "piecewise_offset",
            MeanModelSpec::GaussianPeak { .. } => "gaussian_peak",
        }
    }

    /// Checks the priors and that the input dimension is supported.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let Some(p) = self.priors() {
            p.a.validate("mean.a")?;
            p.b.validate("mean.b")?;
            p.c.validate("mean.c")?;
            if dim != 1 {
                return Err(Error::param(
                    "mean",
                    format!("structured mean models are one-dimensional, campaign has d = {dim}"),
                ));
            }
        }
        Ok(())
    }

    /// Evaluates the mean at `x`. `params` is ignored for `Zero` and required
    /// otherwise.
    pub fn eval(&self, params: Option<&MeanParams>, x: &[f64]) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        let p = params.ok_or_else(|| Error::param("mean", "structured mean needs (a, b, c)"))?;
        if x.len() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, actual: x.len() });
        }
        eval_mean(self, p, x[0])
    }

    /// Draws `(a, b, c)` independently from their priors; `None` for `Zero`.
    pub fn sample_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<MeanParams> {
        self.priors().map(|p| MeanParams {
            a: p.a.sample(rng),
            b: p.b.sample(rng),
            c: p.c.sample(rng),
        })
    }
}

/// Scalar mean evaluation.
pub fn eval_mean(spec: &MeanModelSpec, params: &MeanParams, x: f64) -> Result<f64> {
    let MeanParams { a, b, c } = *params;
    match spec {
        MeanModelSpec::Zero => Ok(0.0),
        MeanModelSpec::PiecewiseOffset { base_form, .. } => {
            let f = base_form.eval(x);
            Ok(if x < c { f - a } else { f - b })
        }
        MeanModelSpec::GaussianPeak { .. } => {
            if c == 0.0 {
                return Err(Error::param("mean.c", "peak width must be nonzero"));
            }
            let d = x - b;
            Ok(a * (-(d * d) / (2.0 * c * c)).exp())
        }
    }
}
