//! Penalized likelihood fits in an eigen-basis.
//!
//! With `β = Σ b_ν φ_ν` the penalized log-likelihood is
//! `ℓ_{n,λ}(α, b) = n⁻¹ Σ ℓ(Y_i; α + Ω_i b) − (λ/2) bᵀΛb`, `Λ = diag(ρ)`.

use crate::eigensys::{design_matrix, EigenSystem};
use crate::error::{Error, Result};
use crate::funcspace::{inner_product, CurveDataset, GridFunction};
use crate::linalg::SpdSolver;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    L2,
    Logistic,
}

impl std::str::FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Loss::L2),
            "logistic" => Ok(Loss::Logistic),
            other => Err(Error::InvalidInput(format!("unknown loss '{other}'"))),
        }
    }
}

/// Fitted intercept and basis coefficients.
#[derive(Debug, Clone)]
pub struct PenalizedFit {
    pub alpha: f64,
    pub b: Vec<f64>,
    pub lambda: f64,
    pub loss: Loss,
    /// `λ^{1/(2k)}`.
    pub h: f64,
    pub with_intercept: bool,
    /// Sample size the fit was computed from.
    pub n: usize,
    pub es: Arc<EigenSystem>,
    /// Newton iterations (0 for the closed-form ℓ2 fit).
    pub iterations: usize,
}

impl PenalizedFit {
    /// `β̂(t) = Σ b_ν φ_ν(t)`.
    pub fn beta(&self) -> GridFunction {
        let v = self.es.phi_matrix() * DVector::from_column_slice(&self.b);
        GridFunction::new(self.es.grid(), v.iter().copied().collect())
            .expect("finite coefficients give a finite slope")
    }

    /// `bᵀΛb = J(β̂, β̂)`.
    pub fn roughness(&self) -> f64 {
        self.b
            .iter()
            .zip(self.es.rho())
            .map(|(b, r)| r * b * b)
            .sum()
    }

    /// `α̂ + ∫ x0 β̂`.
    pub fn linear_predictor(&self, x0: &GridFunction) -> Result<f64> {
        Ok(self.alpha + inner_product(x0, &self.beta())?)
    }
}

pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// `ℓ(y; a)`: `−(y−a)²/2` or `ya − log(1+e^a)`.
pub fn loglik(loss: Loss, y: f64, a: f64) -> f64 {
    match loss {
        Loss::L2 => -0.5 * (y - a) * (y - a),
        Loss::Logistic => y * a - softplus(a),
    }
}

/// `ℓ_{n,λ}(α, b)` on a precomputed design.
pub fn penalized_objective(
    omega: &DMatrix<f64>,
    y: &[f64],
    rho: &[f64],
    alpha: f64,
    b: &[f64],
    lambda: f64,
    loss: Loss,
) -> f64 {
    let n = y.len();
    let eta = omega * DVector::from_column_slice(b);
    let fit: f64 = (0..n)
        .map(|i| loglik(loss, y[i], alpha + eta[i]))
        .sum::<f64>()
        / n as f64;
    let pen: f64 = b.iter().zip(rho).map(|(b, r)| r * b * b).sum();
    fit - 0.5 * lambda * pen
}

/// Same as [`penalized_objective`] with a general penalty matrix.
pub(crate) fn objective_with(
    omega: &DMatrix<f64>,
    y: &[f64],
    penalty: &DMatrix<f64>,
    alpha: f64,
    b: &DVector<f64>,
    lambda: f64,
    loss: Loss,
) -> f64 {
    let n = y.len();
    let eta = omega * b;
    let fit: f64 = (0..n)
        .map(|i| loglik(loss, y[i], alpha + eta[i]))
        .sum::<f64>()
        / n as f64;
    fit - 0.5 * lambda * b.dot(&(penalty * b))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(())
}

fn check_binary(y: &[f64]) -> Result<()> {
    if let Some((row, &value)) = y.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0) {
        return Err(Error::NonBinary { row, value });
    }
    Ok(())
}

pub(crate) fn diag_penalty(rho: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(rho))
}

pub(crate) fn bandwidth(lambda: f64, k: usize) -> f64 {
    lambda.powf(1.0 / (2.0 * k as f64))
}

/// ℓ2 problem on a fixed design, with the intercept profiled out by centering.
pub(crate) struct L2Problem {
    pub omega: DMatrix<f64>,
    pub y: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub penalty: DMatrix<f64>,
    pub y_mean: f64,
    pub col_means: DVector<f64>,
    pub with_intercept: bool,
}

impl L2Problem {
    pub fn new(omega: &DMatrix<f64>, y: &[f64], rho: &[f64], with_intercept: bool) -> Result<Self> {
        Self::with_penalty(
            omega,
            y,
            DMatrix::from_diagonal(&DVector::from_column_slice(rho)),
            with_intercept,
        )
    }

    pub fn with_penalty(
        omega: &DMatrix<f64>,
        y: &[f64],
        penalty: DMatrix<f64>,
        with_intercept: bool,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut om = omega.clone();
        let mut yv = DVector::from_column_slice(y);
        let (y_mean, col_means) = if with_intercept {
            let ym = yv.mean();
            let cm = DVector::from_fn(om.ncols(), |j, _| om.column(j).mean());
            yv.add_scalar_mut(-ym);
            for (j, mut col) in om.column_iter_mut().enumerate() {
                col.add_scalar_mut(-cm[j]);
            }
            (ym, cm)
        } else {
            (0.0, DVector::zeros(om.ncols()))
        };
        let gram = om.transpose() * &om;
        let rhs = om.transpose() * &yv;
        Ok(Self {
            omega: om,
            y: yv,
            gram,
            rhs,
            penalty,
            y_mean,
            col_means,
            with_intercept,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `G + nλΛ`.
    pub fn normal_matrix(&self, lambda: f64) -> DMatrix<f64> {
        let n = self.n() as f64;
        &self.gram + &self.penalty * (n * lambda)
    }

    pub fn solver(&self, lambda: f64) -> Result<SpdSolver> {
        SpdSolver::new(&self.normal_matrix(lambda)).map_err(|e| match e {
            Error::Singular(_) => Error::Rank {
                requested: self.gram.ncols(),
                rank: self.rank_estimate(),
            },
            other => other,
        })
    }

    fn rank_estimate(&self) -> usize {
        let eig = self.gram.clone().symmetric_eigenvalues();
        let top = eig.iter().cloned().fold(0.0_f64, f64::max);
        eig.iter().filter(|v| **v > 1e-12 * top).count()
    }

    /// Coefficients and intercept at `λ`.
    pub fn solve(&self, lambda: f64) -> Result<(f64, DVector<f64>)> {
        let s = self.solver(lambda)?;
        let b = s.solve(&self.rhs);
        let alpha = if self.with_intercept {
            self.y_mean - self.col_means.dot(&b)
        } else {
            0.0
        };
        Ok((alpha, b))
    }

    /// GCV score `n⁻¹‖(I−A)Y‖² / (1 − tr A / n)²`.
    pub fn gcv(&self, lambda: f64) -> Result<f64> {
        let s = self.solver(lambda)?;
        let b = s.solve(&self.rhs);
        let resid = &self.y - &self.omega * &b;
        let tr: f64 = s.solve_mat(&self.gram).trace() + if self.with_intercept { 1.0 } else { 0.0 };
        let n = self.n() as f64;
        let denom = 1.0 - tr / n;
        Ok(resid.norm_squared() / n / (denom * denom))
    }
}

pub fn fit_l2(
    data: &CurveDataset,
    es: &Arc<EigenSystem>,
    lambda: f64,
    with_intercept: bool,
) -> Result<PenalizedFit> {
    check_lambda(lambda)?;
    let omega = design_matrix(data, es)?;
    let prob = L2Problem::new(omega.omega(), data.responses(), es.rho(), with_intercept)?;
    let (alpha, b) = prob.solve(lambda)?;
    Ok(PenalizedFit {
        alpha,
        b: b.iter().copied().collect(),
        lambda,
        loss: Loss::L2,
        h: bandwidth(lambda, es.k()),
        with_intercept,
        n: data.n(),
        es: es.clone(),
        iterations: 0,
    })
}

/// Result of a Newton solve on a fixed design.
#[derive(Debug, Clone)]
pub(crate) struct NewtonResult {
    pub alpha: f64,
    pub b: DVector<f64>,
    pub iterations: usize,
    /// `Σ_i p_i(1−p_i)`-weighted information matrix `n⁻¹ X̃ᵀ W X̃` over `(α?, b)`.
    pub info: DMatrix<f64>,
    pub p: Vec<f64>,
}

pub(crate) const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;

/// Damped Newton ascent for the penalized logistic likelihood.
pub(crate) fn newton_logistic(
    omega: &DMatrix<f64>,
    y: &[f64],
    penalty: &DMatrix<f64>,
    lambda: f64,
    with_intercept: bool,
    start: Option<(f64, &DVector<f64>)>,
) -> Result<NewtonResult> {
    let n = y.len();
    let nb = omega.ncols();
    let off = usize::from(with_intercept);
    let dim = nb + off;
    let (mut alpha, mut b) = match start {
        Some((a, b0)) => (if with_intercept { a } else { 0.0 }, b0.clone()),
        None => {
            let a0 = if with_intercept {
                let ybar = y.iter().sum::<f64>() / n as f64;
                let ybar = ybar.clamp(0.5 / n as f64, 1.0 - 0.5 / n as f64);
                (ybar / (1.0 - ybar)).ln()
            } else {
                0.0
            };
            (a0, DVector::zeros(nb))
        }
    };
    let nf = n as f64;
    let objective = |alpha: f64, b: &DVector<f64>| {
        objective_with(omega, y, penalty, alpha, b, lambda, Loss::Logistic)
    };
    let mut f = objective(alpha, &b);
    let mut iterations = 0;
    loop {
        let eta = omega * &b;
        let p: Vec<f64> = (0..n).map(|i| sigmoid(alpha + eta[i])).collect();
        let resid = DVector::from_fn(n, |i, _| y[i] - p[i]);
        let mut grad = DVector::zeros(dim);
        if with_intercept {
            grad[0] = resid.sum() / nf;
        }
        let gb = omega.transpose() * &resid / nf - penalty * &b * lambda;
        grad.rows_mut(off, nb).copy_from(&gb);
        // information n⁻¹ X̃ᵀWX̃
        let mut xw = DMatrix::zeros(n, dim);
        for i in 0..n {
            let w = (p[i] * (1.0 - p[i])).sqrt();
            if with_intercept {
                xw[(i, 0)] = w;
            }
            for j in 0..nb {
                xw[(i, off + j)] = w * omega[(i, j)];
            }
        }
        let info = xw.transpose() * &xw / nf;
        let gmax = grad.amax();
        if gmax < GRAD_TOL {
            return Ok(NewtonResult {
                alpha,
                b,
                iterations,
                info,
                p,
            });
        }
        if iterations >= MAX_ITER {
            return Err(Error::Convergence {
                iterations,
                gradient: gmax,
                objective: f,
            });
        }
        let mut neg_h = info;
        let mut blk = neg_h.view_mut((off, off), (nb, nb));
        blk += penalty * lambda;
        let step = SpdSolver::new(&neg_h)
            .map_err(|_| Error::Convergence {
                iterations,
                gradient: gmax,
                objective: f,
            })?
            .solve(&grad);
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let a_new = if with_intercept {
                alpha + s * step[0]
            } else {
                0.0
            };
            let b_new = &b + step.rows(off, nb) * s;
            let f_new = objective(a_new, &b_new);
            if f_new.is_finite() && f_new >= f - 1e-14 * f.abs().max(1.0) {
                alpha = a_new;
                b = b_new;
                f = f_new;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            return Err(Error::Convergence {
                iterations,
                gradient: gmax,
                objective: f,
            });
        }
        iterations += 1;
    }
}

pub fn fit_glm(
    data: &CurveDataset,
    es: &Arc<EigenSystem>,
    lambda: f64,
    loss: Loss,
    with_intercept: bool,
) -> Result<PenalizedFit> {
    if loss == Loss::L2 {
        return fit_l2(data, es, lambda, with_intercept);
    }
    check_lambda(lambda)?;
    check_binary(data.responses())?;
    let omega = design_matrix(data, es)?;
    let pen = diag_penalty(es.rho());
    let r = newton_logistic(
        omega.omega(),
        data.responses(),
        &pen,
        lambda,
        with_intercept,
        None,
    )?;
    Ok(PenalizedFit {
        alpha: r.alpha,
        b: r.b.iter().copied().collect(),
        lambda,
        loss,
        h: bandwidth(lambda, es.k()),
        with_intercept,
        n: data.n(),
        es: es.clone(),
        iterations: r.iterations,
    })
}

/// Fits with whichever loss is requested.
pub fn fit(
    data: &CurveDataset,
    es: &Arc<EigenSystem>,
    lambda: f64,
    loss: Loss,
    with_intercept: bool,
) -> Result<PenalizedFit> {
    match loss {
        Loss::L2 => fit_l2(data, es, lambda, with_intercept),
        Loss::Logistic => fit_glm(data, es, lambda, loss, with_intercept),
    }
}

/// GCV scores over a λ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcvTrace {
    pub lambdas: Vec<f64>,
    pub scores: Vec<f64>,
    pub chosen: usize,
}

impl GcvTrace {
    pub fn lambda(&self) -> f64 {
        self.lambdas[self.chosen]
    }
}

/// `count` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// 40 log-spaced values in `[1e-10, 1]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-10, 1.0, 40)
}

fn argmin_finite(scores: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| *s < scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::GcvFailed)
}

pub fn gcv_select(
    data: &CurveDataset,
    es: &EigenSystem,
    lambda_grid: &[f64],
    loss: Loss,
    with_intercept: bool,
) -> Result<GcvTrace> {
    let omega = design_matrix(data, es)?;
    gcv_on_design(
        omega.omega(),
        data.responses(),
        es.rho(),
        lambda_grid,
        loss,
        with_intercept,
    )
}

pub(crate) fn gcv_on_design(
    omega: &DMatrix<f64>,
    y: &[f64],
    rho: &[f64],
    lambda_grid: &[f64],
    loss: Loss,
    with_intercept: bool,
) -> Result<GcvTrace> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    for &l in lambda_grid {
        check_lambda(l)?;
    }
    let scores = match loss {
        Loss::L2 => {
            let prob = L2Problem::new(omega, y, rho, with_intercept)?;
            lambda_grid
                .iter()
                .map(|&l| prob.gcv(l).unwrap_or(f64::NAN))
                .collect::<Vec<_>>()
        }
        Loss::Logistic => {
            check_binary(y)?;
            logistic_gcv_scores(omega, y, &diag_penalty(rho), lambda_grid, with_intercept)
        }
    };
    let chosen = argmin_finite(&scores)?;
    Ok(GcvTrace {
        lambdas: lambda_grid.to_vec(),
        scores,
        chosen,
    })
}

/// Pearson-residual GCV at each converged logistic fit, warm-started from
/// the largest λ downwards.
fn logistic_gcv_scores(
    omega: &DMatrix<f64>,
    y: &[f64],
    penalty: &DMatrix<f64>,
    lambdas: &[f64],
    with_intercept: bool,
) -> Vec<f64> {
    let n = y.len();
    let nf = n as f64;
    let nb = omega.ncols();
    let off = usize::from(with_intercept);
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut scores = vec![f64::NAN; lambdas.len()];
    let mut warm: Option<(f64, DVector<f64>)> = None;
    for i in order {
        let lambda = lambdas[i];
        let start = warm.as_ref().map(|(a, b)| (*a, b));
        let res = match newton_logistic(omega, y, penalty, lambda, with_intercept, start) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let pearson: f64 = (0..n)
            .map(|j| {
                let v = res.p[j] * (1.0 - res.p[j]);
                (y[j] - res.p[j]).powi(2) / v.max(1e-300)
            })
            .sum();
        let mut neg_h = res.info.clone();
        let mut blk = neg_h.view_mut((off, off), (nb, nb));
        blk += penalty * lambda;
        let tr = match SpdSolver::new(&neg_h) {
            Ok(s) => s.solve_mat(&res.info).trace(),
            Err(_) => continue,
        };
        let denom = 1.0 - tr / nf;
        scores[i] = pearson / nf / (denom * denom);
        warm = Some((res.alpha, res.b));
    }
    scores
}

/// `F(α̂ + ∫ x0 β̂)`.
pub fn predict_mean(fit: &PenalizedFit, x0: &GridFunction) -> Result<f64> {
    let eta = fit.linear_predictor(x0)?;
    Ok(match fit.loss {
        Loss::L2 => eta,
        Loss::Logistic => sigmoid(eta),
    })
}
