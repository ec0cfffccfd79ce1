//! One-dimensional two-fidelity test problems on `[0, 10]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Fidelity;

pub const DOMAIN: (f64, f64) = (0.0, 10.0);
/// Location of the high-fidelity discontinuity in problem 2.
pub const JUMP_AT: f64 = 7.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnalyticProblem {
    /// Smooth everywhere at both fidelities.
    Problem1,
    /// High fidelity drops by 15 at `x = 7.5`; low fidelity is smooth.
    Problem2,
}

/// `F1(x) = -(x+1)^2 * sin(2x+2)/5 + 1 + x/3`
pub fn problem1_high(x: f64) -> f64 {
    -(x + 1.0).powi(2) * (2.0 * x + 2.0).sin() / 5.0 + 1.0 + x / 3.0
}

pub fn problem1_low(x: f64) -> f64 {
    problem1_high(x) / 2.0 + x / 4.0 + 2.0
}

pub fn problem2_high(x: f64) -> f64 {
    if x < JUMP_AT {
        problem1_high(x)
    } else {
        problem1_high(x) - 15.0
    }
}

pub fn problem2_low(x: f64) -> f64 {
    problem1_high(x) / 2.0 + x / 4.0 - 5.0
}

impl AnalyticProblem {
    pub fn name(self) -> &'static str {
        match self {
            AnalyticProblem::Problem1 => "problem1",
            AnalyticProblem::Problem2 => "problem2",
        }
    }

    pub fn eval_unchecked(self, x: f64, f: Fidelity) -> f64 {
        match (self, f) {
            (AnalyticProblem::Problem1, Fidelity::High) => problem1_high(x),
            (AnalyticProblem::Problem1, Fidelity::Low) => problem1_low(x),
            (AnalyticProblem::Problem2, Fidelity::High) => problem2_high(x),
            (AnalyticProblem::Problem2, Fidelity::Low) => problem2_low(x),
        }
    }
}

pub fn eval_analytic(problem: AnalyticProblem, x: f64, f: Fidelity) -> Result<f64> {
    let (lo, hi) = DOMAIN;
    if !(lo..=hi).contains(&x) {
        return Err(Error::OutOfDomain { x, lo, hi });
    }
    Ok(problem.eval_unchecked(x, f))
}
