//! Confidence intervals, contrast tests and penalized likelihood ratio tests.

use crate::eigensys::{design_matrix, quadrature_products, EigenSystem, Provenance};
use crate::error::{invalid, Error, Result};
use crate::fit::{
    bandwidth, diag_penalty, newton_logistic, objective_with, predict_mean, sigmoid, L2Problem,
    Loss, PenalizedFit,
};
use crate::funcspace::{inner_product, CurveDataset, GridFunction};
use crate::rng::{derive_seed, stream_rng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, Normal};
use std::collections::BTreeMap;

/// Levels at which every report records a decision.
pub const REPORT_LEVELS: [f64; 3] = [0.01, 0.05, 0.1];

/// Default number of Monte Carlo null replicates.
pub const DEFAULT_MC_REPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    ConditionalMean,
    Prediction,
    PointwiseSlope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub sigma_n: f64,
    pub kind: IntervalKind,
}

impl IntervalReport {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestName {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "PLRT")]
    Plrt,
    #[serde(rename = "PLRT-composite")]
    PlrtComposite,
    #[serde(rename = "AT-gauss")]
    AtGauss,
    #[serde(rename = "AT-subgauss")]
    AtSubgauss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Calibration {
    Asymptotic,
    MonteCarlo { reps: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: TestName,
    pub statistic: f64,
    pub null_params: BTreeMap<String, f64>,
    pub p_value: f64,
    pub reject_at: BTreeMap<String, bool>,
    pub calibration: Calibration,
}

pub(crate) fn decisions(p: f64) -> BTreeMap<String, bool> {
    REPORT_LEVELS
        .iter()
        .map(|l| (format!("{l}"), p <= *l))
        .collect()
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

/// Two-sided standard normal quantile `z_{(1−level)/2}`.
pub fn z_quantile(level: f64) -> Result<f64> {
    check_level(level)?;
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(std.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Whether `σ_n²` carries the `E{B(X)}⁻¹` term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantTerm {
    /// Included when the fit has an intercept or a mean weight is supplied.
    #[default]
    Auto,
    Include,
    Exclude,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalOptions {
    pub constant: ConstantTerm,
    /// Plug-in `E{B(X)}`; defaults to 1 for ℓ2 and 1/4 for logistic.
    pub mean_weight: Option<f64>,
    /// Use `(1+λρ_ν)⁻¹` instead of `(1+λρ_ν)⁻²` in the series.
    pub first_power: bool,
}

/// `x_ν⁰ = ∫ x0 φ_ν`.
fn projections(es: &EigenSystem, x0: &GridFunction) -> Result<Vec<f64>> {
    es.grid().ensure_same(&x0.grid())?;
    let row = DMatrix::from_row_slice(1, x0.values().len(), x0.values());
    Ok(quadrature_products(&row, es).iter().copied().collect())
}

fn damping(fit: &PenalizedFit) -> impl Iterator<Item = f64> + '_ {
    fit.es
        .rho()
        .iter()
        .map(move |r| 1.0 / (1.0 + fit.lambda * r))
}

/// `σ_n²` at `x0`.
pub fn sigma_n_sq(fit: &PenalizedFit, x0: &GridFunction, opts: &IntervalOptions) -> Result<f64> {
    let x = projections(&fit.es, x0)?;
    let power = if opts.first_power { 1 } else { 2 };
    let series: f64 = x
        .iter()
        .zip(damping(fit))
        .map(|(x, d)| x * x * d.powi(power))
        .sum();
    let include = match opts.constant {
        ConstantTerm::Auto => fit.with_intercept || opts.mean_weight.is_some(),
        ConstantTerm::Include => true,
        ConstantTerm::Exclude => false,
    };
    let constant = if include {
        let w = opts.mean_weight.unwrap_or(match fit.loss {
            Loss::L2 => 1.0,
            Loss::Logistic => 0.25,
        });
        if !(w > 0.0 && w.is_finite()) {
            return Err(invalid(format!("mean weight must be positive, got {w}")));
        }
        1.0 / w
    } else {
        0.0
    };
    Ok(constant + series)
}

/// `μ̂₀′` at `x0`.
fn link_derivative(fit: &PenalizedFit, x0: &GridFunction) -> Result<f64> {
    Ok(match fit.loss {
        Loss::L2 => 1.0,
        Loss::Logistic => {
            let p = sigmoid(fit.linear_predictor(x0)?);
            p * (1.0 - p)
        }
    })
}

pub fn ci_conditional_mean(
    fit: &PenalizedFit,
    x0: &GridFunction,
    level: f64,
    opts: &IntervalOptions,
) -> Result<IntervalReport> {
    let z = z_quantile(level)?;
    let center = predict_mean(fit, x0)?;
    let sigma_n = sigma_n_sq(fit, x0, opts)?.sqrt();
    let half = z * sigma_n * link_derivative(fit, x0)? / (fit.n as f64).sqrt();
    Ok(IntervalReport {
        center,
        lower: center - half,
        upper: center + half,
        level,
        sigma_n,
        kind: IntervalKind::ConditionalMean,
    })
}

pub fn prediction_interval(
    fit: &PenalizedFit,
    x0: &GridFunction,
    level: f64,
    noise_var: f64,
    opts: &IntervalOptions,
) -> Result<IntervalReport> {
    if fit.loss != Loss::L2 {
        return Err(invalid("prediction intervals require the l2 loss"));
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(invalid(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    let z = z_quantile(level)?;
    let center = predict_mean(fit, x0)?;
    let sigma_n = sigma_n_sq(fit, x0, opts)?.sqrt();
    let est = sigma_n / (fit.n as f64).sqrt();
    let half = z * (noise_var + est * est).sqrt();
    Ok(IntervalReport {
        center,
        lower: center - half,
        upper: center + half,
        level,
        sigma_n,
        kind: IntervalKind::Prediction,
    })
}

pub fn pointwise_ci_slope(fit: &PenalizedFit, z: f64, level: f64) -> Result<IntervalReport> {
    if !(0.0..=1.0).contains(&z) {
        return Err(invalid(format!(
            "evaluation point must lie in [0, 1], got {z}"
        )));
    }
    let q = z_quantile(level)?;
    let idx = fit.es.grid().nearest_index(z);
    let phi = fit.es.phi_matrix();
    let center: f64 = (0..fit.es.len()).map(|nu| fit.b[nu] * phi[(idx, nu)]).sum();
    let var: f64 = damping(fit)
        .enumerate()
        .map(|(nu, d)| (phi[(idx, nu)] * d).powi(2))
        .sum();
    let sd = var.sqrt();
    let half = q * sd / (fit.n as f64).sqrt();
    Ok(IntervalReport {
        center,
        lower: center - half,
        upper: center + half,
        level,
        sigma_n: sd,
        kind: IntervalKind::PointwiseSlope,
    })
}

/// Studentized test of `H0: ∫ w β = c`.
pub fn contrast_test(fit: &PenalizedFit, w: &GridFunction, c: f64) -> Result<TestReport> {
    let wv = projections(&fit.es, w)?;
    let scale = w.l2_norm();
    if wv.iter().all(|v| v.abs() <= 1e-12 * scale) {
        return Err(Error::DegenerateContrast);
    }
    let denom: f64 = wv
        .iter()
        .zip(damping(fit))
        .map(|(w, d)| (w * d).powi(2))
        .sum::<f64>()
        .sqrt();
    let estimate = inner_product(w, &fit.beta())?;
    let ct = (fit.n as f64).sqrt() * (estimate - c) / denom;
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let p = (2.0 * std.sf(ct.abs())).min(1.0);
    let mut null_params = BTreeMap::new();
    null_params.insert("estimate".into(), estimate);
    null_params.insert("hypothesis".into(), c);
    null_params.insert("sd".into(), denom);
    Ok(TestReport {
        name: TestName::Ct,
        statistic: ct,
        null_params,
        p_value: p,
        reject_at: decisions(p),
        calibration: Calibration::Asymptotic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullConstants {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub sigma2: f64,
    pub u_n: f64,
    /// Tail bounds for the two series (0 when the spectrum is complete).
    pub tail1: f64,
    pub tail2: f64,
    pub terms: usize,
}

const TAIL_LIMIT: f64 = 1e-6;

/// `σ_l² = h Σ_{ν≤N} (1+λρ_ν)^{−l}`, `σ² = σ_1²/σ_2²`, `u_n = h⁻¹σ_1⁴/σ_2²`, with `λ = h^{2k}`.
pub fn null_constants(es: &EigenSystem, h: f64, n_terms: usize) -> Result<NullConstants> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("h must be positive, got {h}")));
    }
    let spec = es.spectrum();
    if n_terms == 0 || n_terms > spec.len() {
        return Err(invalid(format!(
            "series length {n_terms} outside 1..={}",
            spec.len()
        )));
    }
    let k = es.k() as f64;
    let lambda = h.powf(2.0 * k);
    let (mut s1, mut s2) = (0.0, 0.0);
    for r in &spec[..n_terms] {
        let d = 1.0 / (1.0 + lambda * r);
        s1 += d;
        s2 += d * d;
    }
    let (sigma1_sq, sigma2_sq) = (h * s1, h * s2);
    let (tail1, tail2) = if es.spectrum_complete() && n_terms == spec.len() {
        (0.0, 0.0)
    } else {
        let nf = n_terms as f64;
        let x = lambda * spec[n_terms - 1];
        let tail = |l: f64| h * nf * x.powf(-l) / (2.0 * k * l - 1.0);
        (tail(1.0), tail(2.0))
    };
    for (tail, sum) in [(tail1, sigma1_sq), (tail2, sigma2_sq)] {
        if !(tail <= TAIL_LIMIT * sum) {
            return Err(Error::Truncation {
                tail,
                sum,
                limit: TAIL_LIMIT,
            });
        }
    }
    Ok(NullConstants {
        sigma1_sq,
        sigma2_sq,
        sigma2: sigma1_sq / sigma2_sq,
        u_n: sigma1_sq * sigma1_sq / sigma2_sq / h,
        tail1,
        tail2,
        terms: n_terms,
    })
}

/// Reference values for `(σ_1², σ_2², σ², u_n·h)` at `m = 2` with the Brownian kernel.
pub const REFERENCE_CONSTANTS: ConstantSet = ConstantSet {
    sigma1_sq: 0.2876697,
    sigma2_sq: 0.2662496,
    sigma2: 1.080451,
    u_n_h: 0.3108129,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantSet {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub sigma2: f64,
    pub u_n_h: f64,
}

impl ConstantSet {
    fn from_sigmas(s1: f64, s2: f64) -> Self {
        Self {
            sigma1_sq: s1,
            sigma2_sq: s2,
            sigma2: s1 / s2,
            u_n_h: s1 * s1 / s2,
        }
    }

    fn max_rel_dev(&self, other: &ConstantSet) -> f64 {
        [
            (self.sigma1_sq, other.sigma1_sq),
            (self.sigma2_sq, other.sigma2_sq),
            (self.sigma2, other.sigma2),
            (self.u_n_h, other.u_n_h),
        ]
        .iter()
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max)
    }
}

/// `∫_0^∞ (1+x^p)^{−l} dx = Γ(1+1/p) Γ(l−1/p) / Γ(l)`.
pub fn continuum_integral(p: f64, l: f64) -> f64 {
    use statrs::function::gamma::gamma;
    gamma(1.0 + 1.0 / p) * gamma(l - 1.0 / p) / gamma(l)
}

/// The null constants three ways: finite eigen sums, the continuum integral
/// with `ρ_ν = (cν)^{2k}`, and the reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub h: f64,
    pub k: usize,
    pub c: f64,
    pub exact: ConstantSet,
    pub continuum: ConstantSet,
    pub reference: ConstantSet,
    /// Values of `c` that reproduce the reference `σ_1²` and `σ_2²` through the continuum integral.
    pub reference_implied_c: [f64; 2],
    pub exact_vs_continuum: f64,
    pub exact_vs_reference: f64,
    pub tail1: f64,
    pub tail2: f64,
}

/// Growth constant `c` in `ρ_ν ≈ (cν)^{2k}` for a system.
pub fn growth_constant(es: &EigenSystem) -> f64 {
    match es.provenance() {
        Provenance::Analytic => {
            std::f64::consts::PI * es.kernel_scale().powf(-1.0 / (2.0 * es.k() as f64))
        }
        Provenance::Empirical => 1.0,
    }
}

pub fn constants_report(es: &EigenSystem, h: f64, c: Option<f64>) -> Result<ConstantsReport> {
    let nc = null_constants(es, h, es.spectrum().len())?;
    let c = c.unwrap_or_else(|| growth_constant(es));
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!(
            "growth constant must be positive, got {c}"
        )));
    }
    let p = 2.0 * es.k() as f64;
    let (i1, i2) = (continuum_integral(p, 1.0), continuum_integral(p, 2.0));
    let exact = ConstantSet::from_sigmas(nc.sigma1_sq, nc.sigma2_sq);
    let continuum = ConstantSet::from_sigmas(i1 / c, i2 / c);
    let reference = REFERENCE_CONSTANTS;
    Ok(ConstantsReport {
        h,
        k: es.k(),
        c,
        exact,
        continuum,
        reference,
        reference_implied_c: [i1 / reference.sigma1_sq, i2 / reference.sigma2_sq],
        exact_vs_continuum: exact.max_rel_dev(&continuum),
        exact_vs_reference: exact.max_rel_dev(&reference),
        tail1: nc.tail1,
        tail2: nc.tail2,
    })
}

/// Null value `θ_0 = (α_0, b_0)`; an absent `α_0` is profiled out when the
/// model has an intercept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NullValue {
    pub alpha: Option<f64>,
    pub b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlrtOptions {
    pub loss: Loss,
    pub with_intercept: bool,
    pub calibration: Calibration,
}

impl Default for PlrtOptions {
    fn default() -> Self {
        Self {
            loss: Loss::L2,
            with_intercept: false,
            calibration: Calibration::Asymptotic,
        }
    }
}

enum NullModel {
    Fixed { alpha: Option<f64>, b: DVector<f64> },
    Poly { z: DMatrix<f64>, d: DMatrix<f64> },
}

struct PlrtProblem<'a> {
    omega: &'a DMatrix<f64>,
    penalty: DMatrix<f64>,
    lambda: f64,
    loss: Loss,
    with_intercept: bool,
    null: NullModel,
}

struct Evaluated {
    /// `−2n·PLRT`.
    stat: f64,
    plrt: f64,
    null_eta: DVector<f64>,
}

/// `α` maximizing `Σ ℓ(y_i; α + off_i)` for the logistic loss.
fn profile_logistic_intercept(y: &[f64], off: &DVector<f64>) -> Result<f64> {
    let n = y.len() as f64;
    let obj = |a: f64| {
        y.iter()
            .zip(off.iter())
            .map(|(y, o)| crate::fit::loglik(Loss::Logistic, *y, a + o))
            .sum::<f64>()
            / n
    };
    let mut a = 0.0;
    let mut f = obj(a);
    for it in 0..100 {
        let (mut g, mut h) = (0.0, 0.0);
        for (y, o) in y.iter().zip(off.iter()) {
            let p = sigmoid(a + o);
            g += y - p;
            h += p * (1.0 - p);
        }
        g /= n;
        h /= n;
        if g.abs() < crate::fit::GRAD_TOL {
            return Ok(a);
        }
        if h <= 0.0 {
            return Err(Error::Convergence {
                iterations: it,
                gradient: g.abs(),
                objective: f,
            });
        }
        let step = g / h;
        let mut s = 1.0;
        let mut moved = false;
        for _ in 0..=30 {
            let fa = obj(a + s * step);
            if fa >= f - 1e-14 * f.abs().max(1.0) {
                a += s * step;
                f = fa;
                moved = true;
                break;
            }
            s *= 0.5;
        }
        if !moved {
            return Err(Error::Convergence {
                iterations: it,
                gradient: g.abs(),
                objective: f,
            });
        }
    }
    Err(Error::Convergence {
        iterations: 100,
        gradient: f64::NAN,
        objective: f,
    })
}

impl PlrtProblem<'_> {
    fn alt(&self, y: &[f64]) -> Result<f64> {
        let (alpha, b) = match self.loss {
            Loss::L2 => {
                L2Problem::with_penalty(self.omega, y, self.penalty.clone(), self.with_intercept)?
                    .solve(self.lambda)?
            }
            Loss::Logistic => {
                let r = newton_logistic(
                    self.omega,
                    y,
                    &self.penalty,
                    self.lambda,
                    self.with_intercept,
                    None,
                )?;
                (r.alpha, r.b)
            }
        };
        Ok(objective_with(
            self.omega,
            y,
            &self.penalty,
            alpha,
            &b,
            self.lambda,
            self.loss,
        ))
    }

    fn null(&self, y: &[f64]) -> Result<(f64, DVector<f64>)> {
        match &self.null {
            NullModel::Fixed { alpha, b } => {
                let eta = self.omega * b;
                let a = match (alpha, self.with_intercept) {
                    (Some(a), _) => *a,
                    (None, false) => 0.0,
                    (None, true) => match self.loss {
                        Loss::L2 => {
                            y.iter().zip(eta.iter()).map(|(y, e)| y - e).sum::<f64>()
                                / y.len() as f64
                        }
                        Loss::Logistic => profile_logistic_intercept(y, &eta)?,
                    },
                };
                let obj =
                    objective_with(self.omega, y, &self.penalty, a, b, self.lambda, self.loss);
                Ok((obj, eta.add_scalar(a)))
            }
            NullModel::Poly { z, d } => {
                let (a, c) = match self.loss {
                    Loss::L2 => L2Problem::with_penalty(z, y, d.clone(), self.with_intercept)?
                        .solve(self.lambda)?,
                    Loss::Logistic => {
                        let r = newton_logistic(z, y, d, self.lambda, self.with_intercept, None)?;
                        (r.alpha, r.b)
                    }
                };
                let obj = objective_with(z, y, d, a, &c, self.lambda, self.loss);
                Ok((obj, (z * c).add_scalar(a)))
            }
        }
    }

    fn evaluate(&self, y: &[f64]) -> Result<Evaluated> {
        let alt = self.alt(y)?;
        let (null, null_eta) = self.null(y)?;
        let plrt = null - alt;
        Ok(Evaluated {
            stat: -2.0 * y.len() as f64 * plrt,
            plrt,
            null_eta,
        })
    }

    /// Monte Carlo null draws of `−2n·PLRT` with responses simulated from the fitted null.
    fn simulate(&self, null_eta: &DVector<f64>, reps: usize, seed: u64) -> Result<Vec<f64>> {
        let stream = derive_seed(seed, 0x706c_7274);
        let draws: Vec<Result<f64>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(stream, r as u64);
                let y: Vec<f64> = null_eta
                    .iter()
                    .map(|eta| match self.loss {
                        Loss::L2 => eta + rng.sample::<f64, _>(StandardNormal),
                        Loss::Logistic => f64::from(rng.random::<f64>() < sigmoid(*eta)),
                    })
                    .collect();
                self.evaluate(&y).map(|e| e.stat)
            })
            .collect();
        collect_draws(draws)
    }
}

/// Keeps successful replicates; more than 1% failures invalidates the run.
pub(crate) fn collect_draws(draws: Vec<Result<f64>>) -> Result<Vec<f64>> {
    let total = draws.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0;
    let mut first = None;
    for d in draws {
        match d {
            Ok(v) => ok.push(v),
            Err(e) => {
                failed += 1;
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed * 100 > total {
        return Err(Error::TooManyFailures {
            failed,
            trials: total,
            first: first.unwrap_or_default(),
        });
    }
    Ok(ok)
}

/// `(1 + #{draws ≥ stat}) / (1 + R)`.
pub(crate) fn mc_p_value(stat: f64, draws: &[f64]) -> f64 {
    let exceed = draws.iter().filter(|d| **d >= stat).count();
    (1 + exceed) as f64 / (1 + draws.len()) as f64
}

/// Upper tail of `χ²_{u}` at `x`, continuous `u` through the gamma law.
pub fn chi2_sf(u: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let g = Gamma::new(u / 2.0, 0.5).expect("positive degrees of freedom");
    g.sf(x)
}

/// Upper-`α` quantile of `χ²_{u}`.
pub fn chi2_quantile(u: f64, alpha: f64) -> f64 {
    let g = Gamma::new(u / 2.0, 0.5).expect("positive degrees of freedom");
    g.inverse_cdf(1.0 - alpha)
}

fn calibrate(
    name: TestName,
    problem: &PlrtProblem<'_>,
    observed: Evaluated,
    es: &EigenSystem,
    calibration: Calibration,
    extra: BTreeMap<String, f64>,
) -> Result<TestReport> {
    let h = bandwidth(problem.lambda, es.k());
    let mut null_params = extra;
    null_params.insert("plrt".into(), observed.plrt);
    null_params.insert("lambda".into(), problem.lambda);
    null_params.insert("h".into(), h);
    let p = match calibration {
        Calibration::Asymptotic => {
            let nc = null_constants(es, h, es.spectrum().len())?;
            null_params.insert("u_n".into(), nc.u_n);
            null_params.insert("sigma2".into(), nc.sigma2);
            null_params.insert("sigma1_sq".into(), nc.sigma1_sq);
            null_params.insert("sigma2_sq".into(), nc.sigma2_sq);
            chi2_sf(nc.u_n, nc.sigma2 * observed.stat)
        }
        Calibration::MonteCarlo { reps, seed } => {
            if reps == 0 {
                return Err(invalid(
                    "Monte Carlo calibration needs at least one replicate",
                ));
            }
            let draws = problem.simulate(&observed.null_eta, reps, seed)?;
            null_params.insert("reps_used".into(), draws.len() as f64);
            mc_p_value(observed.stat, &draws)
        }
    };
    Ok(TestReport {
        name,
        statistic: observed.stat,
        null_params,
        p_value: p,
        reject_at: decisions(p),
        calibration,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

fn check_responses(data: &CurveDataset, loss: Loss) -> Result<()> {
    if loss == Loss::Logistic {
        if let Some((row, &value)) = data
            .responses()
            .iter()
            .enumerate()
            .find(|(_, v)| **v != 0.0 && **v != 1.0)
        {
            return Err(Error::NonBinary { row, value });
        }
    }
    Ok(())
}

/// Penalized likelihood ratio test of `H0: θ = θ_0`. The reported statistic is `−2n·PLRT`.
pub fn plrt(
    data: &CurveDataset,
    es: &EigenSystem,
    lambda: f64,
    theta0: &NullValue,
    opts: &PlrtOptions,
) -> Result<TestReport> {
    check_lambda(lambda)?;
    check_responses(data, opts.loss)?;
    let omega = design_matrix(data, es)?;
    let b0 = match &theta0.b {
        Some(b) if b.len() != es.len() => {
            return Err(invalid(format!(
                "null coefficients have length {} but the basis has {}",
                b.len(),
                es.len()
            )))
        }
        Some(b) => DVector::from_column_slice(b),
        None => DVector::zeros(es.len()),
    };
    let problem = PlrtProblem {
        omega: omega.omega(),
        penalty: diag_penalty(es.rho()),
        lambda,
        loss: opts.loss,
        with_intercept: opts.with_intercept,
        null: NullModel::Fixed {
            alpha: theta0.alpha,
            b: b0,
        },
    };
    let observed = problem.evaluate(data.responses())?;
    calibrate(
        TestName::Plrt,
        &problem,
        observed,
        es,
        opts.calibration,
        BTreeMap::new(),
    )
}

/// `−(1/2n) Yᵀ Ω (nI + nλΛ)⁻¹ Ωᵀ Y`, valid when `ΩᵀΩ = nI`.
pub fn plrt_quadratic_form(y: &[f64], omega: &DMatrix<f64>, rho: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let w = omega.transpose() * DVector::from_column_slice(y);
    let q: f64 = w
        .iter()
        .zip(rho)
        .map(|(w, r)| w * w / (n * (1.0 + lambda * r)))
        .sum();
    -q / (2.0 * n)
}

/// Maximum polynomial degree accepted by [`plrt_composite`].
pub const MAX_POLY_DEGREE: usize = 8;

fn falling(a: usize, m: usize) -> f64 {
    (a + 1 - m..=a).map(|v| v as f64).product()
}

/// `D_{ab} = J(t^a, t^b)` for `a, b ≤ j`.
pub fn poly_penalty(j: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(j + 1, j + 1, |a, b| {
        if a < m || b < m {
            0.0
        } else {
            falling(a, m) * falling(b, m) / (a + b + 1 - 2 * m) as f64
        }
    })
}

/// PLRT of the composite null "β is a polynomial of degree ≤ j".
pub fn plrt_composite(
    data: &CurveDataset,
    es: &EigenSystem,
    lambda: f64,
    j: usize,
    opts: &PlrtOptions,
) -> Result<TestReport> {
    if j > MAX_POLY_DEGREE {
        return Err(Error::Conditioning { degree: j });
    }
    check_lambda(lambda)?;
    check_responses(data, opts.loss)?;
    let omega = design_matrix(data, es)?;
    let grid = data.grid();
    let t = grid.points();
    let q = grid.weights();
    let monomials = DMatrix::from_fn(grid.len(), j + 1, |i, a| q[i] * t[i].powi(a as i32));
    let z = data.curves() * monomials;
    let problem = PlrtProblem {
        omega: omega.omega(),
        penalty: diag_penalty(es.rho()),
        lambda,
        loss: opts.loss,
        with_intercept: opts.with_intercept,
        null: NullModel::Poly {
            z,
            d: poly_penalty(j, es.m()),
        },
    };
    let observed = problem.evaluate(data.responses())?;
    let mut extra = BTreeMap::new();
    extra.insert("degree".into(), j as f64);
    calibrate(
        TestName::PlrtComposite,
        &problem,
        observed,
        es,
        opts.calibration,
        extra,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensys::{empirical_eigensystem, solve_bvp_analytic};
    use crate::fit::{fit_l2, log_grid};
    use crate::funcspace::Grid;
    use std::sync::Arc;

    fn data(n: usize, t: usize, seed: u64, beta: impl Fn(f64) -> f64) -> CurveDataset {
        let g = Grid::uniform(t).unwrap();
        let mut rng = stream_rng(seed, 0);
        let h = g.spacing();
        let mut x = DMatrix::zeros(n, t);
        for i in 0..n {
            for j in 1..t {
                let e: f64 = rng.sample(StandardNormal);
                x[(i, j)] = x[(i, j - 1)] + e * h.sqrt();
            }
        }
        let bv = GridFunction::from_fn(g, beta).unwrap();
        let y = (0..n)
            .map(|i| {
                let xi = GridFunction::new(g, x.row(i).iter().copied().collect()).unwrap();
                inner_product(&xi, &bv).unwrap() + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        CurveDataset::new(g, x, y, None).unwrap()
    }

    #[test]
    fn z_at_95() {
        assert!((z_quantile(0.95).unwrap() - 1.959964).abs() < 1e-6);
        assert!(z_quantile(1.0).is_err());
        assert!(z_quantile(0.0).is_err());
    }

    #[test]
    fn zero_curve_interval_is_intercept_only() {
        let d = data(50, 101, 1, |t| t);
        let es = Arc::new(solve_bvp_analytic(2, 6, d.grid()).unwrap());
        let fit = fit_l2(&d, &es, 1e-4, true).unwrap();
        let x0 = GridFunction::zeros(d.grid());
        let ci = ci_conditional_mean(&fit, &x0, 0.95, &IntervalOptions::default()).unwrap();
        assert_eq!(ci.sigma_n, 1.0);
        let half = 1.959963984540054 / 50f64.sqrt();
        assert!((ci.center - fit.alpha).abs() < 1e-15);
        assert!((ci.upper - ci.center - half).abs() < 1e-12);
    }

    #[test]
    fn prediction_width_without_intercept() {
        let d = data(50, 101, 2, |t| t);
        let es = Arc::new(solve_bvp_analytic(2, 6, d.grid()).unwrap());
        let fit = fit_l2(&d, &es, 1e-4, false).unwrap();
        let x0 = GridFunction::zeros(d.grid());
        let pi = prediction_interval(&fit, &x0, 0.95, 1.0, &IntervalOptions::default()).unwrap();
        assert!((pi.width() - 2.0 * 1.959963984540054).abs() < 1e-12);
        assert!(prediction_interval(&fit, &x0, 0.95, 0.0, &IntervalOptions::default()).is_err());
    }

    #[test]
    fn width_scales_with_root_n() {
        let d = data(40, 101, 3, |t| t);
        let es = Arc::new(solve_bvp_analytic(2, 6, d.grid()).unwrap());
        let mut fit = fit_l2(&d, &es, 1e-4, false).unwrap();
        let x0 = d.curve(0);
        let w1 = ci_conditional_mean(&fit, &x0, 0.9, &IntervalOptions::default())
            .unwrap()
            .width();
        fit.n *= 4;
        let w2 = ci_conditional_mean(&fit, &x0, 0.9, &IntervalOptions::default())
            .unwrap()
            .width();
        assert!((w1 - 2.0 * w2).abs() < 1e-14);
    }

    #[test]
    fn first_power_switch() {
        let d = data(40, 101, 4, |t| t);
        let es = Arc::new(solve_bvp_analytic(2, 10, d.grid()).unwrap());
        let fit = fit_l2(&d, &es, 1e-3, false).unwrap();
        let x0 = d.curve(1);
        let sq = sigma_n_sq(&fit, &x0, &IntervalOptions::default()).unwrap();
        let opts = IntervalOptions {
            first_power: true,
            ..Default::default()
        };
        assert!(sigma_n_sq(&fit, &x0, &opts).unwrap() >= sq);
    }

    #[test]
    fn pointwise_variance_positive_and_stable() {
        let g = Grid::uniform(1001).unwrap();
        let es100 = Arc::new(solve_bvp_analytic(2, 100, g).unwrap());
        let es50 = Arc::new(es100.truncated(52).unwrap());
        let lambda = 1e-7;
        let mk = |es: &Arc<EigenSystem>| PenalizedFit {
            alpha: 0.0,
            b: vec![0.0; es.len()],
            lambda,
            loss: Loss::L2,
            h: bandwidth(lambda, es.k()),
            with_intercept: false,
            n: 100,
            es: es.clone(),
            iterations: 0,
        };
        for z in [0.1, 0.5, 0.9] {
            let a = pointwise_ci_slope(&mk(&es50), z, 0.95).unwrap();
            let b = pointwise_ci_slope(&mk(&es100), z, 0.95).unwrap();
            assert!(a.sigma_n > 0.0);
            assert!(((a.sigma_n - b.sigma_n) / b.sigma_n).abs() < 1e-3, "{z}");
        }
    }

    #[test]
    fn contrast_exact_hypothesis_and_rescaling() {
        let d = data(60, 201, 5, |t| (4.0 * t).sin());
        let es = Arc::new(solve_bvp_analytic(2, 10, d.grid()).unwrap());
        let fit = fit_l2(&d, &es, 1e-5, false).unwrap();
        let w = GridFunction::from_fn(d.grid(), |t| 1.0 + t).unwrap();
        let c = inner_product(&w, &fit.beta()).unwrap();
        let r = contrast_test(&fit, &w, c).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let base = contrast_test(&fit, &w, 0.3).unwrap();
        let scaled = contrast_test(&fit, &w.scaled(4.0), 1.2).unwrap();
        assert_eq!(base.statistic, scaled.statistic);
        let odd = contrast_test(&fit, &w.scaled(3.7), 0.3 * 3.7).unwrap();
        assert!((base.statistic - odd.statistic).abs() < 1e-12 * base.statistic.abs());
        assert!(matches!(
            contrast_test(&fit, &GridFunction::zeros(d.grid()), 0.0),
            Err(Error::DegenerateContrast)
        ));
    }

    #[test]
    fn single_frequency_contrast() {
        let g = Grid::uniform(501).unwrap();
        let es = Arc::new(solve_bvp_analytic(2, 8, g).unwrap());
        let lambda = 1e-8;
        let fit = PenalizedFit {
            alpha: 0.0,
            b: vec![0.0; es.len()],
            lambda,
            loss: Loss::L2,
            h: bandwidth(lambda, es.k()),
            with_intercept: false,
            n: 100,
            es: es.clone(),
            iterations: 0,
        };
        // w = Cφ_ν* has projections δ_{νν*}
        let star = 4;
        let phi = es.phi(star);
        let w = GridFunction::new(g, crate::funcspace::brownian_apply(phi.values(), g)).unwrap();
        let r = contrast_test(&fit, &w, -1.0).unwrap();
        let expect = 1.0 / (1.0 + lambda * es.rho()[star]);
        assert!((r.null_params["sd"] - expect).abs() < 1e-3 * expect);
    }

    #[test]
    fn unpenalized_constants() {
        let g = Grid::uniform(101).unwrap();
        let es = EigenSystem::from_parts(
            g,
            vec![0.0; 5],
            DMatrix::zeros(101, 5),
            2,
            3,
            Provenance::Empirical,
        )
        .unwrap();
        let h = 0.1;
        let nc = null_constants(&es, h, 5).unwrap();
        assert!((nc.sigma1_sq - h * 5.0).abs() < 1e-15);
        assert!((nc.sigma2 - 1.0).abs() < 1e-15);
        assert!((nc.u_n - 5.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_detected() {
        let g = Grid::uniform(101).unwrap();
        let es = solve_bvp_analytic(2, 10, g).unwrap();
        assert!(matches!(
            null_constants(&es, 0.004, 12),
            Err(Error::Truncation { .. })
        ));
        assert!(null_constants(&es, 0.004, es.spectrum().len()).is_ok());
    }

    fn numeric_continuum(p: f64, l: f64) -> f64 {
        // substitution x = u/(1−u) on [0,1), composite Simpson
        let n = 200_000;
        let f = |u: f64| {
            if u >= 1.0 {
                return 0.0;
            }
            let x = u / (1.0 - u);
            (1.0 + x.powf(p)).powf(-l) / ((1.0 - u) * (1.0 - u))
        };
        let h = 1.0 / n as f64;
        let mut s = f(0.0) + f(1.0);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn continuum_closed_form_matches_quadrature() {
        for (p, l) in [(6.0, 1.0), (6.0, 2.0), (4.0, 1.0), (2.0, 2.0)] {
            let a = continuum_integral(p, l);
            let b = numeric_continuum(p, l);
            assert!((a - b).abs() < 1e-8, "{p} {l}: {a} {b}");
        }
        assert!((continuum_integral(6.0, 1.0) - std::f64::consts::PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_sum_tracks_continuum() {
        let g = Grid::uniform(201).unwrap();
        let es = solve_bvp_analytic(2, 4, g).unwrap();
        let rep = constants_report(&es, 0.004, None).unwrap();
        assert!(rep.exact_vs_continuum < 0.05, "{rep:?}");
        assert!((rep.continuum.sigma1_sq - 1.0 / 3.0).abs() < 1e-12);
        assert!((rep.continuum.sigma2_sq - 5.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_form_equivalence() {
        let d = data(60, 201, 6, |t| t * (1.0 - t));
        let es = empirical_eigensystem(&d, None, 2).unwrap();
        let lambda = 1e-3;
        let r = plrt(
            &d,
            &es,
            lambda,
            &NullValue::default(),
            &PlrtOptions::default(),
        )
        .unwrap();
        let om = design_matrix(&d, &es).unwrap();
        let q = plrt_quadratic_form(d.responses(), om.omega(), es.rho(), lambda);
        assert!(((r.null_params["plrt"] - q) / q).abs() < 1e-8);
        assert!(r.statistic >= 0.0);
    }

    #[test]
    fn plrt_vanishes_for_heavy_penalty_at_null_fit() {
        let d = data(40, 101, 7, |_| 0.0);
        let es = solve_bvp_analytic(2, 6, d.grid()).unwrap();
        let es = EigenSystem::from_parts(
            d.grid(),
            es.penalized_rho().to_vec(),
            es.phi_matrix().columns(2, es.len() - 2).into_owned(),
            2,
            3,
            Provenance::Analytic,
        )
        .unwrap();
        let y = vec![0.0; d.n()];
        let d0 = d.with_responses(y).unwrap();
        let opts = PlrtOptions {
            calibration: Calibration::MonteCarlo { reps: 50, seed: 1 },
            ..Default::default()
        };
        let r = plrt(&d0, &es, 1e8, &NullValue::default(), &opts).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!(!r.reject_at["0.05"]);
    }

    #[test]
    fn plrt_nonnegative_over_lambdas() {
        let d = data(50, 101, 8, |t| t);
        let es = solve_bvp_analytic(2, 10, d.grid()).unwrap();
        for lambda in log_grid(1e-8, 1.0, 9) {
            for icpt in [false, true] {
                let opts = PlrtOptions {
                    with_intercept: icpt,
                    ..Default::default()
                };
                let r = plrt(&d, &es, lambda, &NullValue::default(), &opts).unwrap();
                assert!(r.statistic >= -1e-10, "{lambda}");
                assert!((0.0..=1.0).contains(&r.p_value));
            }
        }
    }

    #[test]
    fn poly_penalty_values() {
        let d = poly_penalty(3, 2);
        assert_eq!(d[(0, 0)], 0.0);
        assert_eq!(d[(1, 3)], 0.0);
        assert_eq!(d[(2, 2)], 4.0);
        assert_eq!(d[(2, 3)], 6.0);
        assert_eq!(d[(3, 3)], 12.0);
        assert_eq!(poly_penalty(0, 2), DMatrix::zeros(1, 1));
    }

    #[test]
    fn composite_rejects_high_degree() {
        let d = data(30, 101, 9, |t| t);
        let es = solve_bvp_analytic(2, 6, d.grid()).unwrap();
        assert!(matches!(
            plrt_composite(&d, &es, 1e-4, 9, &PlrtOptions::default()),
            Err(Error::Conditioning { degree: 9 })
        ));
        let r = plrt_composite(&d, &es, 1e-4, 1, &PlrtOptions::default()).unwrap();
        assert!(r.statistic.is_finite());
    }

    #[test]
    fn mc_p_value_counts() {
        assert_eq!(mc_p_value(1.0, &[0.0, 2.0, 3.0]), 0.75);
        assert_eq!(mc_p_value(5.0, &[0.0, 2.0, 3.0]), 0.25);
    }

    #[test]
    fn chi2_matches_known_quantile() {
        assert!((chi2_quantile(1.0, 0.05) - 3.841458820694124).abs() < 1e-8);
        assert!((chi2_sf(2.0, 2.0) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn report_serializes_expected_names() {
        let r = TestReport {
            name: TestName::PlrtComposite,
            statistic: 1.0,
            null_params: BTreeMap::new(),
            p_value: 0.5,
            reject_at: decisions(0.5),
            calibration: Calibration::MonteCarlo { reps: 10, seed: 3 },
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"PLRT-composite\""));
        assert!(s.contains("\"monte-carlo\""));
        assert!(s.contains("\"reps\":10"));
    }
}
