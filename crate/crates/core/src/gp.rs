//! Multi-fidelity Gaussian-process inference.
//!
//! Hyperparameters (and structured-mean parameters) are not optimized; they
//! are sampled from their posterior with an adaptive random-walk Metropolis
//! chain in an unconstrained parameterization, and predictions average the
//! exact GP conditional over all retained draws.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    covariance_matrix_unchecked, cross_covariance, Fidelity, FidelityCoupling, FidelityPoint,
    KernelHyperParams, SpatialFamily,
};
use crate::mean::{MeanModelSpec, MeanParams};
use crate::prior::PriorDistribution;
use crate::rng::{self, Stage};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<FidelityPoint>,
    pub outputs: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Vec<FidelityPoint>, outputs: Vec<f64>) -> Result<Self> {
        let d = Dataset { points, outputs };
        d.validate()?;
        Ok(d)
    }

    pub fn push(&mut self, point: FidelityPoint, y: f64) {
        self.points.push(point);
        self.outputs.push(y);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, FidelityPoint::dim)
    }

    pub fn count(&self, f: Fidelity) -> usize {
        self.points.iter().filter(|p| p.f == f).count()
    }

    pub fn has_both_fidelities(&self) -> bool {
        self.count(Fidelity::Low) > 0 && self.count(Fidelity::High) > 0
    }

    /// Subset of observations taken at fidelity `f`.
    pub fn subset(&self, f: Fidelity) -> Dataset {
        let (points, outputs) = self
            .points
            .iter()
            .zip(&self.outputs)
            .filter(|(p, _)| p.f == f)
            .map(|(p, y)| (p.clone(), *y))
            .unzip();
        Dataset { points, outputs }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Dataset("no observations".into()));
        }
        if self.points.len() != self.outputs.len() {
            return Err(Error::Dataset(format!(
                "{} points but {} outputs",
                self.points.len(),
                self.outputs.len()
            )));
        }
        let d = self.dim();
        if let Some(p) = self.points.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, actual: p.dim() });
        }
        if let Some(y) = self.outputs.iter().find(|y| !y.is_finite()) {
            return Err(Error::Dataset(format!("non-finite output {y}")));
        }
        Ok(())
    }
}

/// Priors over the kernel hyperparameters. `length_scale` applies to every
/// input dimension independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub sigma2: PriorDistribution,
    pub length_scale: PriorDistribution,
    pub delta: PriorDistribution,
    pub noise2: PriorDistribution,
}

impl Default for HyperPriors {
    /// `U(0.01, 1)` for variance, length scales and fidelity gap; `HalfN(0.03)`
    /// for the noise variance.
    fn default() -> Self {
        HyperPriors {
            sigma2: PriorDistribution::uniform(0.01, 1.0),
            length_scale: PriorDistribution::uniform(0.01, 1.0),
            delta: PriorDistribution::uniform(0.01, 1.0),
            noise2: PriorDistribution::half_normal(0.03),
        }
    }
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        self.sigma2.validate("priors.sigma2")?;
        self.length_scale.validate("priors.length_scale")?;
        self.delta.validate("priors.delta")?;
        self.noise2.validate("priors.noise2")?;
        for (name, p) in [
            ("priors.sigma2", self.sigma2),
            ("priors.length_scale", self.length_scale),
            ("priors.delta", self.delta),
        ] {
            let positive = matches!(p, PriorDistribution::HalfNormal { .. }) || p.support_min() > 0.0;
            if !positive {
                return Err(Error::param(name, "support must be strictly positive"));
            }
        }
        if matches!(self.noise2, PriorDistribution::Normal { .. }) || self.noise2.support_min() < 0.0 {
            return Err(Error::param("priors.noise2", "support must be nonnegative"));
        }
        Ok(())
    }
}

/// Everything that defines the surrogate apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModelSpec {
    pub spatial_family: SpatialFamily,
    #[serde(default)]
    pub coupling: FidelityCoupling,
    #[serde(default)]
    pub mean: MeanModelSpec,
    #[serde(default)]
    pub priors: HyperPriors,
}

impl GpModelSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        self.priors.validate()?;
        self.mean.validate(dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub warmup: usize,
    pub samples: usize,
    pub chains: usize,
    /// Acceptance rate targeted by step-size adaptation during warmup.
    pub target_accept: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            warmup: 500,
            samples: 500,
            chains: 1,
            target_accept: 0.3,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("mcmc.samples", "must be >= 1"));
        }
        if self.chains == 0 {
            return Err(Error::config("mcmc.chains", "must be >= 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("mcmc.target_accept", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraw {
    pub hp: KernelHyperParams,
    pub mean: Option<MeanParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub warmup_acceptance: f64,
    pub sampling_acceptance: f64,
    /// Proposals whose log posterior was not finite (factorization failure
    /// or a parameter leaving the model's valid range).
    pub divergences: usize,
    pub free_parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub draws: Vec<PosteriorDraw>,
    pub diagnostics: Vec<ChainDiagnostics>,
}

impl PosteriorDraws {
    pub fn single(draw: PosteriorDraw) -> Self {
        PosteriorDraws {
            draws: vec![draw],
            diagnostics: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub grid: Vec<Vec<f64>>,
    pub mu_hf: Vec<f64>,
    pub var_hf: Vec<f64>,
    pub mu_lf: Vec<f64>,
    pub var_lf: Vec<f64>,
}

impl PosteriorPrediction {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn mean(&self, f: Fidelity) -> &[f64] {
        match f {
            Fidelity::High => &self.mu_hf,
            Fidelity::Low => &self.mu_lf,
        }
    }

    pub fn variance(&self, f: Fidelity) -> &[f64] {
        match f {
            Fidelity::High => &self.var_hf,
            Fidelity::Low => &self.var_lf,
        }
    }
}

fn factorization_error(hp: &KernelHyperParams) -> Error {
    Error::Factorization {
        sigma2: hp.sigma2,
        length_scales: hp.length_scales.clone(),
        delta: hp.delta,
        noise2: hp.noise2,
    }
}

fn residuals(data: &Dataset, mean: &MeanModelSpec, params: Option<&MeanParams>) -> Result<DVector<f64>> {
    let mut r = DVector::zeros(data.len());
    for (i, (p, y)) in data.points.iter().zip(&data.outputs).enumerate() {
        r[i] = y - mean.eval(params, &p.x)?;
    }
    Ok(r)
}

/// GP conditioned on one hyperparameter draw.
struct Conditioned {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    residual: DVector<f64>,
}

impl Conditioned {
    fn new(data: &Dataset, hp: &KernelHyperParams, mean: &MeanModelSpec, params: Option<&MeanParams>) -> Result<Self> {
        let residual = residuals(data, mean, params)?;
        let k = covariance_matrix_unchecked(&data.points, hp, true);
        let chol = Cholesky::new(k).ok_or_else(|| factorization_error(hp))?;
        let alpha = chol.solve(&residual);
        Ok(Conditioned { chol, alpha, residual })
    }

    fn log_likelihood(&self) -> f64 {
        let n = self.residual.len() as f64;
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        -0.5 * self.residual.dot(&self.alpha) - 0.5 * log_det - 0.5 * n * LN_2PI
    }
}

fn check_inputs(data: &Dataset, hp: &KernelHyperParams) -> Result<()> {
    data.validate()?;
    hp.validate()?;
    if data.dim() != hp.dim() {
        return Err(Error::DimensionMismatch { expected: hp.dim(), actual: data.dim() });
    }
    Ok(())
}

/// Gaussian log marginal likelihood of `y - m(X)` under the multi-fidelity
/// covariance with noise and jitter on the diagonal.
pub fn log_marginal_likelihood(
    data: &Dataset,
    hp: &KernelHyperParams,
    mean: &MeanModelSpec,
    mean_params: Option<&MeanParams>,
) -> Result<f64> {
    check_inputs(data, hp)?;
    Ok(Conditioned::new(data, hp, mean, mean_params)?.log_likelihood())
}

/// Flat parameter layout `[sigma2, theta_1..theta_d, delta, noise2, (a, b, c)]`.
struct ParamLayout {
    priors: Vec<PriorDistribution>,
    dim: usize,
    family: SpatialFamily,
    coupling: FidelityCoupling,
    has_mean: bool,
}

impl ParamLayout {
    fn new(spec: &GpModelSpec, dim: usize) -> Self {
        let mut priors = vec![spec.priors.sigma2];
        priors.extend(std::iter::repeat_n(spec.priors.length_scale, dim));
        priors.push(spec.priors.delta);
        priors.push(spec.priors.noise2);
        let has_mean = if let Some(mp) = spec.mean.priors() {
            priors.extend(mp.as_array());
            true
        } else {
            false
        };
        ParamLayout {
            priors,
            dim,
            family: spec.spatial_family,
            coupling: spec.coupling,
            has_mean,
        }
    }

    fn unpack(&self, v: &[f64]) -> PosteriorDraw {
        let d = self.dim;
        PosteriorDraw {
            hp: KernelHyperParams {
                sigma2: v[0],
                length_scales: v[1..=d].to_vec(),
                delta: v[d + 1],
                noise2: v[d + 2],
                spatial_family: self.family,
                coupling: self.coupling,
            },
            mean: self.has_mean.then(|| MeanParams::new(v[d + 3], v[d + 4], v[d + 5])),
        }
    }
}

struct Target<'a> {
    data: &'a Dataset,
    mean: &'a MeanModelSpec,
    layout: ParamLayout,
    /// Indices of parameters that are not point masses.
    free: Vec<usize>,
    /// Values of all parameters; free entries are overwritten per evaluation.
    base: Vec<f64>,
}

impl Target<'_> {
    fn constrained(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let mut v = self.base.clone();
        let mut ln_jac = 0.0;
        for (zi, &idx) in z.iter().zip(&self.free) {
            let (val, lj) = self.layout.priors[idx].from_unconstrained(*zi);
            v[idx] = val;
            ln_jac += lj;
        }
        (v, ln_jac)
    }

    fn log_posterior_constrained(&self, v: &[f64]) -> f64 {
        let mut lp = 0.0;
        for (p, x) in self.layout.priors.iter().zip(v) {
            lp += p.ln_pdf(*x);
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let draw = self.layout.unpack(v);
        if draw.hp.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        match Conditioned::new(self.data, &draw.hp, self.mean, draw.mean.as_ref()) {
            Ok(c) => {
                let ll = c.log_likelihood();
                if ll.is_finite() {
                    lp + ll
                } else {
                    f64::NEG_INFINITY
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn log_posterior(&self, z: &[f64]) -> f64 {
        let (v, ln_jac) = self.constrained(z);
        let lp = self.log_posterior_constrained(&v);
        if lp.is_finite() {
            lp + ln_jac
        } else {
            f64::NEG_INFINITY
        }
    }
}

struct ChainOutput {
    draws: Vec<PosteriorDraw>,
    diagnostics: ChainDiagnostics,
}

fn empirical_cholesky(history: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = history.len();
    let d = history.first()?.len();
    if n < d + 2 {
        return None;
    }
    let mut mean = vec![0.0; d];
    for h in history {
        for (m, x) in mean.iter_mut().zip(h) {
            *m += x / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for h in history {
        for i in 0..d {
            for j in 0..=i {
                cov[(i, j)] += (h[i] - mean[i]) * (h[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
        cov[(i, i)] += 1e-6;
    }
    Cholesky::new(cov).map(|c| c.l())
}

fn run_chain(target: &Target<'_>, cfg: &McmcConfig, seed: u64) -> Result<ChainOutput> {
    let mut rng = rng::stream(seed, Stage::Chain, 0);
    let dim = target.free.len();

    if dim == 0 {
        let (v, _) = target.constrained(&[]);
        let lp = target.log_posterior_constrained(&v);
        if !lp.is_finite() {
            return Err(Error::Mcmc {
                message: "fixed parameters give a non-finite log posterior".into(),
                warmup_acceptance: 0.0,
                sampling_acceptance: 0.0,
            });
        }
        let draw = target.layout.unpack(&v);
        return Ok(ChainOutput {
            draws: vec![draw; cfg.samples],
            diagnostics: ChainDiagnostics {
                warmup_acceptance: 1.0,
                sampling_acceptance: 1.0,
                divergences: 0,
                free_parameters: 0,
            },
        });
    }

    // initialize at the best of a handful of prior draws
    let mut z = Vec::new();
    let mut lp = f64::NEG_INFINITY;
    for attempt in 0..64 {
        let cand: Vec<f64> = target
            .free
            .iter()
            .map(|&i| {
                let p = target.layout.priors[i];
                let v = if attempt == 0 { p.mean() } else { p.sample(&mut rng) };
                p.to_unconstrained(v)
            })
            .collect();
        let l = target.log_posterior(&cand);
        if l > lp || z.is_empty() {
            z = cand;
            lp = l;
        }
    }
    if !lp.is_finite() {
        return Err(Error::Mcmc {
            message: "no prior draw produced a finite log posterior".into(),
            warmup_acceptance: 0.0,
            sampling_acceptance: 0.0,
        });
    }

    let mut chol = DMatrix::<f64>::identity(dim, dim);
    let mut log_scale = (0.5f64).ln();
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(cfg.warmup);
    let mut divergences = 0usize;
    let mut eps = DVector::<f64>::zeros(dim);

    let mut propose = |z: &[f64], chol: &DMatrix<f64>, scale: f64, rng: &mut rng::StreamRng| -> Vec<f64> {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let step = chol * &eps;
        z.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect()
    };

    let mut warm_accepted = 0usize;
    let adapt_start = cfg.warmup / 4;
    for t in 0..cfg.warmup {
        let cand = propose(&z, &chol, log_scale.exp(), &mut rng);
        let lp_cand = target.log_posterior(&cand);
        let accept_prob = if lp_cand.is_finite() {
            (lp_cand - lp).exp().min(1.0)
        } else {
            divergences += 1;
            0.0
        };
        if rng.random::<f64>() < accept_prob {
            z = cand;
            lp = lp_cand;
            warm_accepted += 1;
        }
        let gamma = 1.0 / ((t + 1) as f64).powf(0.6);
        log_scale = (log_scale + gamma * (accept_prob - cfg.target_accept)).clamp(-12.0, 3.0);
        history.push(z.clone());
        if t >= adapt_start && t > 0 && (t - adapt_start) % 50 == 49 {
            if let Some(l) = empirical_cholesky(&history[adapt_start..]) {
                chol = l;
                log_scale = (2.38 / (dim as f64).sqrt()).ln();
            }
        }
    }

    let mut draws = Vec::with_capacity(cfg.samples);
    let mut accepted = 0usize;
    let scale = log_scale.exp();
    for _ in 0..cfg.samples {
        let cand = propose(&z, &chol, scale, &mut rng);
        let lp_cand = target.log_posterior(&cand);
        if !lp_cand.is_finite() {
            divergences += 1;
        } else if rng.random::<f64>() < (lp_cand - lp).exp() {
            z = cand;
            lp = lp_cand;
            accepted += 1;
        }
        let (v, _) = target.constrained(&z);
        draws.push(target.layout.unpack(&v));
    }

    let diagnostics = ChainDiagnostics {
        warmup_acceptance: if cfg.warmup > 0 { warm_accepted as f64 / cfg.warmup as f64 } else { 0.0 },
        sampling_acceptance: accepted as f64 / cfg.samples as f64,
        divergences,
        free_parameters: dim,
    };
    if accepted == 0 {
        return Err(Error::Mcmc {
            message: format!("all {} sampling proposals rejected ({} divergent)", cfg.samples, divergences),
            warmup_acceptance: diagnostics.warmup_acceptance,
            sampling_acceptance: 0.0,
        });
    }
    Ok(ChainOutput { draws, diagnostics })
}

/// Samples the joint posterior over kernel hyperparameters and mean
/// parameters. Chains run in parallel; draws are concatenated in chain order.
pub fn fit_mcmc(data: &Dataset, spec: &GpModelSpec, cfg: &McmcConfig, seed: u64) -> Result<PosteriorDraws> {
    data.validate()?;
    spec.validate(data.dim())?;
    cfg.validate()?;

    let layout = ParamLayout::new(spec, data.dim());
    let free: Vec<usize> = (0..layout.priors.len()).filter(|&i| !layout.priors[i].is_fixed()).collect();
    let base: Vec<f64> = layout.priors.iter().map(PriorDistribution::mean).collect();
    let target = Target {
        data,
        mean: &spec.mean,
        layout,
        free,
        base,
    };

    let outputs: Vec<Result<ChainOutput>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(&target, cfg, rng::derive_seed(seed, Stage::Chain, c as u64)))
        .collect();

    let mut draws = Vec::with_capacity(cfg.samples * cfg.chains);
    let mut diagnostics = Vec::with_capacity(cfg.chains);
    for out in outputs {
        let out = out?;
        draws.extend(out.draws);
        diagnostics.push(out.diagnostics);
    }
    Ok(PosteriorDraws { draws, diagnostics })
}

/// Posterior mean and variance of the latent function at `grid` for one draw,
/// ordered as `(mu_hf, var_hf, mu_lf, var_lf)`.
pub fn predict_draw(
    data: &Dataset,
    draw: &PosteriorDraw,
    mean: &MeanModelSpec,
    grid: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let cond = Conditioned::new(data, &draw.hp, mean, draw.mean.as_ref())?;
    let m = grid.len();
    let queries: Vec<FidelityPoint> = [Fidelity::High, Fidelity::Low]
        .iter()
        .flat_map(|&f| grid.iter().map(move |x| FidelityPoint::new(x.clone(), f)))
        .collect();
    let kxs = cross_covariance(&data.points, &queries, &draw.hp);
    let mu_resid = kxs.tr_mul(&cond.alpha);
    let v = cond
        .chol
        .l_dirty()
        .solve_lower_triangular(&kxs)
        .ok_or_else(|| factorization_error(&draw.hp))?;
    let mut mu_hf = Vec::with_capacity(m);
    let mut var_hf = Vec::with_capacity(m);
    let mut mu_lf = Vec::with_capacity(m);
    let mut var_lf = Vec::with_capacity(m);
    for (j, q) in queries.iter().enumerate() {
        let prior_mean = mean.eval(draw.mean.as_ref(), &q.x)?;
        let reduction: f64 = v.column(j).iter().map(|e| e * e).sum();
        let var = (draw.hp.sigma2 - reduction).max(0.0);
        let mu = prior_mean + mu_resid[j];
        if j < m {
            mu_hf.push(mu);
            var_hf.push(var);
        } else {
            mu_lf.push(mu);
            var_lf.push(var);
        }
    }
    Ok((mu_hf, var_hf, mu_lf, var_lf))
}

/// Posterior predictive at both fidelities, aggregated over draws by the law
/// of total variance.
pub fn predict(
    data: &Dataset,
    draws: &PosteriorDraws,
    mean: &MeanModelSpec,
    grid: &[Vec<f64>],
) -> Result<PosteriorPrediction> {
    if grid.is_empty() {
        return Err(Error::GridMismatch("prediction grid is empty".into()));
    }
    if draws.is_empty() {
        return Err(Error::Mcmc {
            message: "no posterior draws to predict with".into(),
            warmup_acceptance: 0.0,
            sampling_acceptance: 0.0,
        });
    }
    data.validate()?;
    for d in &draws.draws {
        check_inputs(data, &d.hp)?;
    }
    if let Some(x) = grid.iter().find(|x| x.len() != data.dim()) {
        return Err(Error::DimensionMismatch { expected: data.dim(), actual: x.len() });
    }

    let per_draw: Vec<_> = draws
        .draws
        .par_iter()
        .map(|d| predict_draw(data, d, mean, grid))
        .collect::<Result<Vec<_>>>()?;

    if per_draw.len() == 1 {
        let (mu_hf, var_hf, mu_lf, var_lf) = per_draw.into_iter().next().expect("one draw");
        return Ok(PosteriorPrediction {
            grid: grid.to_vec(),
            mu_hf,
            var_hf,
            mu_lf,
            var_lf,
        });
    }

    let s = per_draw.len() as f64;
    let m = grid.len();
    let aggregate = |pick: fn(&(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)) -> (&Vec<f64>, &Vec<f64>)| {
        let mut mu = vec![0.0; m];
        let mut var = vec![0.0; m];
        for d in &per_draw {
            let (dm, _) = pick(d);
            for (a, b) in mu.iter_mut().zip(dm) {
                *a += b / s;
            }
        }
        for d in &per_draw {
            let (dm, dv) = pick(d);
            for i in 0..m {
                let dev = dm[i] - mu[i];
                var[i] += (dv[i] + dev * dev) / s;
            }
        }
        (mu, var)
    };
    let (mu_hf, var_hf) = aggregate(|d| (&d.0, &d.1));
    let (mu_lf, var_lf) = aggregate(|d| (&d.2, &d.3));
    Ok(PosteriorPrediction {
        grid: grid.to_vec(),
        mu_hf,
        var_hf,
        mu_lf,
        var_lf,
    })
}
