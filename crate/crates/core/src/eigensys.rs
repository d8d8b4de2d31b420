//! Bases that simultaneously diagonalize `V` and `J`.
//!
//! Two constructions are provided. The analytic one solves the eigenproblem
//! for the Brownian kernel `C(s,t) = min(s,t)` through its ODE reduction
//! `(-1)^{m+1} g^{(2m+2)} = ρ g` with `y = g''`; eigenvalues are the roots of
//! the boundary-condition determinant. The empirical one diagonalizes the
//! sample covariance of the curves.

use crate::error::{Error, Result};
use crate::funcspace::{brownian_apply, dot_weighted, CurveDataset, Grid, GridFunction};
use crate::linalg::pivoted_cholesky;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Default number of analytic eigenvalues kept for series constants.
pub const DEFAULT_SPECTRUM_LEN: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Empirical,
}

/// Eigenvalues `ρ_ν` and eigenfunctions `φ_ν` with `V(φ_ν, φ_μ) = δ_νμ`
/// and `J(φ_ν, φ_μ) = ρ_ν δ_νμ`.
///
/// For the analytic route the first `null_dim` functions span the null
/// space of `J` (polynomials of degree `< m`, `ρ = 0`).
#[derive(Debug, Clone)]
pub struct EigenSystem {
    grid: Grid,
    rho: Vec<f64>,
    phi: DMatrix<f64>,
    m: usize,
    k: usize,
    provenance: Provenance,
    null_dim: usize,
    spectrum: Vec<f64>,
    spectrum_complete: bool,
    kernel_scale: f64,
    zeta: Option<Vec<f64>>,
}

impl EigenSystem {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Eigenvalues excluding the null space of the penalty.
    pub fn penalized_rho(&self) -> &[f64] {
        &self.rho[self.null_dim..]
    }

    pub fn phi(&self, nu: usize) -> GridFunction {
        GridFunction::new(self.grid, self.phi.column(nu).iter().copied().collect())
            .expect("eigenfunction values are finite")
    }

    /// `T × N` matrix whose columns are the eigenfunctions on the grid.
    pub fn phi_matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn null_dim(&self) -> usize {
        self.null_dim
    }

    /// Eigenvalues available for series sums; may extend past the stored functions.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// `true` when `spectrum` is the whole spectrum (no tail beyond it).
    pub fn spectrum_complete(&self) -> bool {
        self.spectrum_complete
    }

    /// `c` in `C(s,t) = c·min(s,t)` for analytic systems.
    pub fn kernel_scale(&self) -> f64 {
        self.kernel_scale
    }

    /// Covariance eigenvalues `ζ̂_ν` of an empirical system.
    pub fn zeta(&self) -> Option<&[f64]> {
        self.zeta.as_deref()
    }

    /// Same system for the kernel `c·C`: `ρ → ρ/c`, `φ → φ/√c`.
    pub fn rescaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidInput(format!(
                "kernel scale must be positive, got {c}"
            )));
        }
        let mut out = self.clone();
        out.rho.iter_mut().for_each(|r| *r /= c);
        out.spectrum.iter_mut().for_each(|r| *r /= c);
        out.phi /= c.sqrt();
        out.kernel_scale *= c;
        if let Some(z) = out.zeta.as_mut() {
            z.iter_mut().for_each(|v| *v *= c);
        }
        Ok(out)
    }

    /// The first `n` basis functions; the spectrum is kept.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidInput(format!(
                "cannot keep {n} of {} eigenfunctions",
                self.len()
            )));
        }
        let mut out = self.clone();
        out.rho.truncate(n);
        out.phi = self.phi.columns(0, n).into_owned();
        out.null_dim = self.null_dim.min(n);
        if let Some(z) = out.zeta.as_mut() {
            z.truncate(n);
        }
        Ok(out)
    }

    /// Builds a system from explicit parts (used for custom bases and tests).
    pub fn from_parts(
        grid: Grid,
        rho: Vec<f64>,
        phi: DMatrix<f64>,
        m: usize,
        k: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if phi.nrows() != grid.len() || phi.ncols() != rho.len() {
            return Err(Error::InvalidInput(
                "eigenfunction matrix shape mismatch".into(),
            ));
        }
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || rho.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::InvalidInput(
                "rho must be nonnegative and nondecreasing".into(),
            ));
        }
        let null_dim = rho.iter().take_while(|r| **r == 0.0).count();
        Ok(Self {
            grid,
            spectrum: rho.clone(),
            rho,
            phi,
            m,
            k,
            provenance,
            null_dim,
            spectrum_complete: true,
            kernel_scale: 1.0,
            zeta: None,
        })
    }
}

/// Options for [`solve_bvp_analytic_with`].
#[derive(Debug, Clone)]
pub struct AnalyticOptions {
    /// Prepend the `m` null-space functions (`ρ = 0`).
    pub include_null: bool,
    /// `c` in `C(s,t) = c·min(s,t)`.
    pub scale: f64,
    /// Number of penalized eigenvalues kept in `spectrum`.
    pub spectrum_len: usize,
}

impl Default for AnalyticOptions {
    fn default() -> Self {
        Self {
            include_null: true,
            scale: 1.0,
            spectrum_len: DEFAULT_SPECTRUM_LEN,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Part {
    Re,
    Im,
}

/// Real fundamental system of `(-1)^{m+1} g^{(2m+2)} = r^{2m+2} g`.
///
/// Each root `z` of `z^{2(m+1)} = (-1)^{m+1}` contributes `Re` and `Im` of
/// `exp(r z (t - s))`, with `s = 1` for growing modes so nothing overflows.
#[derive(Debug, Clone)]
pub(crate) struct BvpBasis {
    m: usize,
    terms: Vec<(Complex64, Part, f64)>,
}

impl BvpBasis {
    pub(crate) fn new(m: usize) -> Self {
        let p = 2 * (m + 1);
        let offset = if (m + 1) % 2 == 1 { 0.5 } else { 0.0 };
        let mut terms = Vec::with_capacity(p);
        for j in 0..p {
            let ang = 2.0 * PI * (j as f64 + offset) / p as f64;
            let z = Complex64::from_polar(1.0, ang);
            if z.im < -1e-12 {
                continue;
            }
            let shift = if z.re > 1e-12 { 1.0 } else { 0.0 };
            if z.im.abs() <= 1e-12 {
                terms.push((Complex64::new(z.re.round(), 0.0), Part::Re, shift));
            } else {
                terms.push((z, Part::Re, shift));
                terms.push((z, Part::Im, shift));
            }
        }
        debug_assert_eq!(terms.len(), p);
        Self { m, terms }
    }

    fn size(&self) -> usize {
        self.terms.len()
    }

    /// `r^{-j} d^j/dt^j` of basis function `c` at `t`.
    pub(crate) fn eval(&self, c: usize, r: f64, j: usize, t: f64) -> f64 {
        let (z, part, s) = self.terms[c];
        let w = z.powu(j as u32) * (z * (r * (t - s))).exp();
        match part {
            Part::Re => w.re,
            Part::Im => w.im,
        }
    }

    /// Boundary-condition matrix; rows are the conditions, columns the basis.
    pub(crate) fn boundary_matrix(&self, r: f64) -> DMatrix<f64> {
        let m = self.m;
        let mut conds: Vec<(usize, f64)> = Vec::new();
        for j in m + 2..=2 * m + 1 {
            conds.push((j, 0.0));
            conds.push((j, 1.0));
        }
        conds.push((0, 0.0));
        conds.push((1, 1.0));
        let p = self.size();
        DMatrix::from_fn(p, p, |i, c| self.eval(c, r, conds[i].0, conds[i].1))
    }

    fn det(&self, r: f64) -> f64 {
        self.boundary_matrix(r).lu().determinant()
    }

    /// Coefficients spanning the null space of the boundary matrix at `r`.
    pub(crate) fn null_vector(&self, r: f64, nu: usize) -> Result<Vec<f64>> {
        let mtx = self.boundary_matrix(r);
        let svd = mtx.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let sv = &svd.singular_values;
        let smax = sv.max();
        let dim = sv.iter().filter(|s| **s < 1e-6 * smax).count();
        if dim != 1 {
            return Err(Error::Degenerate { nu, dim });
        }
        let (imin, _) =
            sv.iter().enumerate().fold(
                (0, f64::INFINITY),
                |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc },
            );
        Ok(v_t.row(imin).iter().copied().collect())
    }

    /// `r^{-j} g^{(j)}(t)` for coefficients `a`.
    pub(crate) fn eval_combination(&self, a: &[f64], r: f64, j: usize, t: f64) -> f64 {
        a.iter()
            .enumerate()
            .map(|(c, ac)| ac * self.eval(c, r, j, t))
            .sum()
    }
}

/// First `count` roots `r_ν = ρ_ν^{1/(2(m+1))}` of the boundary determinant
/// (penalized eigenvalues only), in increasing order.
pub fn analytic_roots(m: usize, count: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidInput(
            "penalty order m must be at least 1".into(),
        ));
    }
    let basis = BvpBasis::new(m);
    let step = PI / 8.0;
    let mut roots: Vec<f64> = Vec::with_capacity(count);
    let mut lo = 1.0;
    let mut f_lo = basis.det(lo);
    while roots.len() < count {
        let nu = roots.len() + 1;
        let seed = PI * nu as f64;
        let bracket_err = || Error::Bracket {
            nu,
            seed: seed.powi(2 * (m as i32 + 1)),
        };
        // consecutive roots are about π apart; the first lies below π(m + 2)
        let limit = roots.last().map_or(PI * (m as f64 + 2.0), |r| r + 1.5 * PI);
        if lo > limit {
            return Err(bracket_err());
        }
        let hi = lo + step;
        let f_hi = basis.det(hi);
        if f_lo == 0.0 || f_lo.signum() != f_hi.signum() {
            let root = if f_lo == 0.0 {
                lo
            } else {
                bisect(&basis, lo, hi, f_lo)
            };
            if let Some(prev) = roots.last() {
                if root - prev < 0.5 * PI {
                    return Err(bracket_err());
                }
            }
            roots.push(root);
        }
        lo = hi;
        f_lo = f_hi;
    }
    Ok(roots)
}

fn bisect(basis: &BvpBasis, mut lo: f64, mut hi: f64, mut f_lo: f64) -> f64 {
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        let f_mid = basis.det(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Flips `v` so its first entry with `|v_i| > 1e-10` is positive.
fn fix_sign(v: &mut [f64]) {
    if let Some(x) = v.iter().find(|x| x.abs() > 1e-10) {
        if *x < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn v_min(f: &[f64], g: &[f64], grid: Grid) -> f64 {
    dot_weighted(&brownian_apply(f, grid), g)
}

/// Analytic system for `C = min(s,t)` with `n_penalized` penalized functions.
pub fn solve_bvp_analytic(m: usize, n_penalized: usize, grid: Grid) -> Result<EigenSystem> {
    solve_bvp_analytic_with(m, n_penalized, grid, &AnalyticOptions::default())
}

pub fn solve_bvp_analytic_with(
    m: usize,
    n_penalized: usize,
    grid: Grid,
    opts: &AnalyticOptions,
) -> Result<EigenSystem> {
    if n_penalized == 0 {
        return Err(Error::InvalidInput(
            "need at least one eigenfunction".into(),
        ));
    }
    grid.check_order(m)?;
    let p = 2 * (m as i32 + 1);
    let n_roots = n_penalized.max(opts.spectrum_len);
    let roots = analytic_roots(m, n_roots)?;
    let basis = BvpBasis::new(m);
    let points = grid.points();
    let t = grid.len();

    let null_dim = if opts.include_null { m } else { 0 };
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(null_dim + n_penalized);
    for d in 0..null_dim {
        let mut v: Vec<f64> = points.iter().map(|x| x.powi(d as i32)).collect();
        for _ in 0..2 {
            for prev in &cols {
                let c = v_min(&v, prev, grid);
                v.iter_mut().zip(prev).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = v_min(&v, &v, grid).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        fix_sign(&mut v);
        cols.push(v);
    }
    for (i, &r) in roots.iter().take(n_penalized).enumerate() {
        let a = basis.null_vector(r, i + 1)?;
        let mut y: Vec<f64> = points
            .iter()
            .map(|&x| basis.eval_combination(&a, r, 2, x))
            .collect();
        let norm = v_min(&y, &y, grid).sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
        cols.push(y);
    }
    // The continuum functions are V-orthogonal; make them so on the grid too.
    // Working in increasing ρ keeps J diagonal up to the same small corrections.
    for i in null_dim..cols.len() {
        let (done, rest) = cols.split_at_mut(i);
        let v = &mut rest[0];
        for _ in 0..2 {
            for prev in done.iter() {
                let c = v_min(v, prev, grid);
                v.iter_mut().zip(prev).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = v_min(v, v, grid).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        fix_sign(v);
    }

    let mut rho = vec![0.0; null_dim];
    rho.extend(roots.iter().take(n_penalized).map(|r| r.powi(p)));
    let mut spectrum = vec![0.0; null_dim];
    spectrum.extend(roots.iter().map(|r| r.powi(p)));
    let phi = DMatrix::from_fn(t, cols.len(), |i, j| cols[j][i]);
    let es = EigenSystem {
        grid,
        rho,
        phi,
        m,
        k: m + 1,
        provenance: Provenance::Analytic,
        null_dim,
        spectrum,
        spectrum_complete: false,
        kernel_scale: 1.0,
        zeta: None,
    };
    if opts.scale != 1.0 {
        es.rescaled(opts.scale)
    } else {
        Ok(es)
    }
}

/// Relative threshold below which covariance eigenvalues count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Empirical system from the (weighted) sample covariance.
///
/// `ρ_ν` is set to `ν^{2k}`. With `n_funcs = None` all numerically nonzero
/// directions are kept. The decomposition runs on the `n × n` dual Gram
/// matrix `n⁻¹ X̃ Q X̃ᵀ`, which is cheaper than the `T × T` covariance when
/// curves are low rank.
pub fn empirical_eigensystem(
    data: &CurveDataset,
    n_funcs: Option<usize>,
    k: usize,
) -> Result<EigenSystem> {
    empirical_design(data, n_funcs, k).map(|(es, _)| es)
}

/// Empirical system together with its design on the same sample.
///
/// The design is taken from the Gram eigenvectors, `Ω = √n U`, rather than by
/// quadrature against `φ`; the two agree in exact arithmetic but the former
/// stays orthonormal when the sample covariance is badly conditioned.
pub fn empirical_design(
    data: &CurveDataset,
    n_funcs: Option<usize>,
    k: usize,
) -> Result<(EigenSystem, DesignMatrix)> {
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let grid = data.grid();
    let q = grid.weights();
    let sw: Vec<f64> = match data.weights() {
        Some(w) => w.iter().map(|v| v.sqrt()).collect(),
        None => vec![1.0; n],
    };
    let t = grid.len();
    let x = data.curves();
    let xt = DMatrix::from_fn(n, t, |i, j| sw[i] * x[(i, j)]);
    let xq = DMatrix::from_fn(n, t, |i, j| xt[(i, j)] * q[j]);
    let mut g = &xq * xt.transpose();
    g /= n as f64;
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }

    let l = pivoted_cholesky(&g, 1e-13);
    let r0 = l.ncols();
    if r0 == 0 {
        return Err(Error::Rank {
            requested: n_funcs.unwrap_or(1),
            rank: 0,
        });
    }
    let ltl = l.transpose() * &l;
    let eig = SymmetricEigen::new(ltl);
    let mut order: Vec<usize> = (0..r0).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let z1 = eig.eigenvalues[order[0]];
    let rank = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > RANK_TOL * z1)
        .count();
    let nf = n_funcs.unwrap_or(rank);
    if nf == 0 || nf > rank {
        return Err(Error::Rank {
            requested: nf,
            rank,
        });
    }

    let mut zeta = Vec::with_capacity(nf);
    let mut phi = DMatrix::zeros(t, nf);
    let mut omega = DMatrix::zeros(n, nf);
    let sqrt_n = (n as f64).sqrt();
    for (c, &i) in order.iter().take(nf).enumerate() {
        let z = eig.eigenvalues[i];
        let mut u = &l * eig.eigenvectors.column(i) / z.sqrt();
        // re-normalize against the truncation of the pivoted factor
        let un = u.norm();
        u /= un;
        // φ = X̃ᵀ u / (√n ζ)
        let mut col = xt.transpose() * &u;
        col /= sqrt_n * z;
        let mut v: Vec<f64> = col.iter().copied().collect();
        let before = v.iter().copied().find(|x| x.abs() > 1e-10);
        fix_sign(&mut v);
        let flipped = before.is_some_and(|b| b < 0.0);
        phi.set_column(c, &nalgebra::DVector::from_vec(v));
        let sgn = if flipped { -sqrt_n } else { sqrt_n };
        for r in 0..n {
            omega[(r, c)] = sgn * u[r] / sw[r];
        }
        zeta.push(z);
    }
    let rho = (1..=nf)
        .map(|nu| (nu as f64).powi(2 * k as i32))
        .collect::<Vec<_>>();
    let es = EigenSystem {
        grid,
        spectrum: rho.clone(),
        rho,
        phi,
        m: k.saturating_sub(1).max(1),
        k,
        provenance: Provenance::Empirical,
        null_dim: 0,
        spectrum_complete: true,
        kernel_scale: 1.0,
        zeta: Some(zeta),
    };
    Ok((es, DesignMatrix { omega }))
}

/// `ω_iν = ∫ X_i φ_ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    omega: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        if omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design has non-finite entries".into()));
        }
        Ok(Self { omega })
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn n(&self) -> usize {
        self.omega.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.omega.ncols()
    }

    /// `max |(1/n) ΩᵀΩ − I|`.
    pub fn orthonormality_deviation(&self) -> f64 {
        let n = self.n() as f64;
        let g = self.omega.transpose() * &self.omega / n;
        let mut dev = 0.0_f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((g[(i, j)] - target).abs());
            }
        }
        dev
    }
}

pub fn design_matrix(data: &CurveDataset, es: &EigenSystem) -> Result<DesignMatrix> {
    data.grid().ensure_same(&es.grid)?;
    Ok(DesignMatrix {
        omega: quadrature_products(data.curves(), es),
    })
}

/// Rows of `x` integrated against every eigenfunction.
pub(crate) fn quadrature_products(x: &DMatrix<f64>, es: &EigenSystem) -> DMatrix<f64> {
    let q = es.grid.weights();
    let mut qphi = es.phi.clone();
    for (i, mut row) in qphi.row_iter_mut().enumerate() {
        row *= q[i];
    }
    x * qphi
}

/// Plug-in `c` for `C(s,t) ≈ c·min(s,t)`: matches `E{B(X) V_min(X,X)} = c/6`.
pub fn plugin_kernel_scale(data: &CurveDataset) -> Result<f64> {
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let grid = data.grid();
    let x = data.curves();
    let mut total = 0.0;
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let w = data.weights().map_or(1.0, |w| w[i]);
        total += w * v_min(&row, &row, grid);
    }
    let c = 6.0 * total / n as f64;
    if !(c > 0.0) {
        return Err(Error::InvalidInput("curves are identically zero".into()));
    }
    Ok(c)
}
