//! Discretized function space over `[0, 1]`.
//!
//! Curves live on a uniform grid and are integrated with the composite
//! trapezoid rule. The roughness penalty `J(f, g) = ∫ f^(m) g^(m)` uses
//! repeated second-order finite differences (one-sided at the boundary),
//! and the covariance bilinear form `V(f, g) = ∫∫ C(s,t) f(t) g(s)` is a
//! double trapezoid sum.

use crate::error::{invalid, Error, Result};
use nalgebra::DMatrix;
use std::cmp::Ordering;

/// Relative tolerance used to accept externally supplied grid points as uniform.
pub const UNIFORM_TOL: f64 = 1e-12;

/// Uniform grid `t_i = i / (T - 1)`, `i = 0..T`.
///
/// A uniform grid on `[0, 1]` is determined by its size, so that is all we
/// store; two grids are the same grid iff they have the same size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    len: usize,
}

impl Grid {
    pub fn uniform(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(invalid(format!("grid needs at least 2 points, got {len}")));
        }
        Ok(Self { len })
    }

    /// Validates externally supplied points (e.g. the header row of a curve file).
    pub fn from_points(points: &[f64]) -> Result<Self> {
        let grid = Self::uniform(points.len())?;
        if points.iter().any(|p| !p.is_finite()) {
            return Err(invalid("grid points must be finite"));
        }
        if points[0] != 0.0 || points[points.len() - 1] != 1.0 {
            return Err(invalid("grid must start at 0 and end at 1"));
        }
        let h = grid.spacing();
        for (i, w) in points.windows(2).enumerate() {
            let d = w[1] - w[0];
            if d <= 0.0 {
                return Err(invalid(format!(
                    "grid points not increasing at index {}",
                    i + 1
                )));
            }
            if ((d - h) / h).abs() > UNIFORM_TOL.max(4.0 * f64::EPSILON * grid.len as f64) {
                return Err(invalid(format!(
                    "grid spacing not uniform at index {}: {d} vs {h}",
                    i + 1
                )));
            }
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.len - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        i as f64 / (self.len - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.point(i)).collect()
    }

    /// Trapezoid weights; `Σ w_i f_i ≈ ∫_0^1 f`.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.len];
        w[0] = 0.5 * h;
        w[self.len - 1] = 0.5 * h;
        w
    }

    /// Index of the grid point nearest to `z` (clamped into `[0, 1]`).
    pub fn nearest_index(&self, z: f64) -> usize {
        let z = z.clamp(0.0, 1.0);
        ((z * (self.len - 1) as f64).round() as usize).min(self.len - 1)
    }

    /// Errors unless the grid can carry an order-`m` penalty.
    pub fn check_order(&self, m: usize) -> Result<()> {
        let required = 2 * m + 3;
        if m == 0 || self.len < required {
            return Err(Error::Resolution {
                points: self.len,
                order: m,
                required,
            });
        }
        Ok(())
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                left: self.len,
                right: other.len,
            });
        }
        Ok(())
    }
}

/// A real function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "function has {} values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite function value at index {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.points().into_iter().map(f).collect())
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        trapezoid(&sq, self.grid).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// Composite trapezoid sum of raw grid values.
///
/// The interior sum is divided by `T - 1` last so constants integrate to
/// exactly their value.
pub(crate) fn trapezoid(values: &[f64], grid: Grid) -> f64 {
    let n = values.len();
    debug_assert_eq!(n, grid.len());
    let interior: f64 = values[1..n - 1].iter().sum();
    (interior + 0.5 * (values[0] + values[n - 1])) / (n - 1) as f64
}

/// `∫_0^1 f(t) dt` by the composite trapezoid rule.
pub fn integrate(f: &GridFunction) -> f64 {
    trapezoid(&f.values, f.grid)
}

/// `∫_0^1 f(t) g(t) dt`.
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    Ok(dot_weighted(&f.values, &g.values))
}

pub(crate) fn dot_weighted(f: &[f64], g: &[f64]) -> f64 {
    let n = f.len();
    let interior: f64 = (1..n - 1).map(|i| f[i] * g[i]).sum();
    (interior + 0.5 * (f[0] * g[0] + f[n - 1] * g[n - 1])) / (n - 1) as f64
}

/// Second-order accurate first derivative (central inside, one-sided at the ends).
fn gradient(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    d
}

/// `m`-th derivative by `m` passes of the second-order gradient.
pub fn derivative(f: &GridFunction, m: usize) -> Result<GridFunction> {
    f.grid.check_order(m)?;
    let h = f.grid.spacing();
    let mut v = f.values.clone();
    for _ in 0..m {
        v = gradient(&v, h);
    }
    Ok(GridFunction {
        grid: f.grid,
        values: v,
    })
}

/// Roughness penalty `J(f, g) = ∫ f^(m)(t) g^(m)(t) dt`.
pub fn penalty_j(f: &GridFunction, g: &GridFunction, m: usize) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    let fd = derivative(f, m)?;
    let gd = derivative(g, m)?;
    Ok(dot_weighted(&fd.values, &gd.values))
}

/// `n` curves on a common grid with responses and optional positive weights `B̂(X_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveDataset {
    grid: Grid,
    x: DMatrix<f64>,
    y: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl CurveDataset {
    pub fn new(
        grid: Grid,
        x: DMatrix<f64>,
        y: Vec<f64>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if x.ncols() != grid.len() {
            return Err(invalid(format!(
                "curve matrix has {} columns on a {}-point grid",
                x.ncols(),
                grid.len()
            )));
        }
        if x.nrows() != y.len() {
            return Err(invalid(format!(
                "{} curves but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite value in curves or responses"));
        }
        if let Some(w) = &weights {
            if w.len() != y.len() {
                return Err(invalid(format!(
                    "{} weights for {} curves",
                    w.len(),
                    y.len()
                )));
            }
            if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(invalid("weights must be strictly positive"));
            }
        }
        Ok(Self {
            grid,
            x,
            y,
            weights,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn curve(&self, i: usize) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: self.x.row(i).iter().copied().collect(),
        }
    }

    pub fn with_responses(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.grid, self.x.clone(), y, self.weights.clone())
    }

    pub fn with_weights(&self, weights: Option<Vec<f64>>) -> Result<Self> {
        Self::new(self.grid, self.x.clone(), self.y.clone(), weights)
    }

    /// Row order sorted by the bit patterns of (weight, curve values).
    fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n()).collect();
        let key_w = |i: usize| self.weights.as_ref().map_or(1.0, |w| w[i]);
        idx.sort_by(|&a, &b| {
            key_w(a).total_cmp(&key_w(b)).then_with(|| {
                for t in 0..self.grid.len() {
                    match self.x[(a, t)].total_cmp(&self.x[(b, t)]) {
                        Ordering::Equal => continue,
                        other => return other,
                    }
                }
                Ordering::Equal
            })
        });
        idx
    }
}

/// Symmetric kernel `C(s, t)` sampled on `grid × grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovKernel {
    grid: Grid,
    values: DMatrix<f64>,
}

impl CovKernel {
    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        let t = grid.len();
        if values.nrows() != t || values.ncols() != t {
            return Err(invalid("kernel matrix must be T x T"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("kernel has non-finite entries"));
        }
        let scale = values.amax().max(f64::MIN_POSITIVE);
        for i in 0..t {
            for j in 0..i {
                if (values[(i, j)] - values[(j, i)]).abs() > 1e-10 * scale {
                    return Err(invalid(format!("kernel not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { grid, values })
    }

    /// Brownian-motion covariance `min(s, t)`.
    pub fn brownian(grid: Grid) -> Self {
        let p = grid.points();
        let values = DMatrix::from_fn(grid.len(), grid.len(), |i, j| p[i].min(p[j]));
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// `Ĉ(s,t) = n⁻¹ Σ_i w_i X_i(s) X_i(t)` with `w_i = 1` when no weights are present.
///
/// Rows are accumulated in a canonical order, so the result does not depend
/// on the order of the observations.
pub fn empirical_cov(data: &CurveDataset) -> Result<CovKernel> {
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let order = data.canonical_order();
    let t = data.grid.len();
    let x = DMatrix::from_fn(n, t, |i, j| data.x[(order[i], j)]);
    let wx = DMatrix::from_fn(n, t, |i, j| {
        let w = data.weights.as_ref().map_or(1.0, |w| w[order[i]]);
        w * x[(i, j)]
    });
    let mut c = x.transpose() * wx;
    let inv_n = 1.0 / n as f64;
    for i in 0..t {
        for j in i..t {
            let v = c[(i, j)] * inv_n;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(CovKernel {
        grid: data.grid,
        values: c,
    })
}

/// `V(f, g) = ∫∫ C(s,t) f(t) g(s) ds dt`.
pub fn v_form(c: &CovKernel, f: &GridFunction, g: &GridFunction) -> Result<f64> {
    c.grid.ensure_same(&f.grid)?;
    c.grid.ensure_same(&g.grid)?;
    let w = c.grid.weights();
    let t = c.grid.len();
    let mut total = 0.0;
    for s in 0..t {
        let row: f64 = (0..t).map(|j| c.values[(s, j)] * w[j] * f.values[j]).sum();
        total += w[s] * g.values[s] * row;
    }
    Ok(total)
}

/// `(C f)(t) = ∫ min(s,t) f(s) ds` on the grid in `O(T)`.
pub(crate) fn brownian_apply(values: &[f64], grid: Grid) -> Vec<f64> {
    let w = grid.weights();
    let t = values.len();
    let p = grid.points();
    // below[i] = Σ_{s<=i} w_s s f(s); above[i] = Σ_{s>i} w_s f(s)
    let mut out = vec![0.0; t];
    let mut above = vec![0.0; t];
    let mut acc = 0.0;
    for i in (0..t).rev() {
        above[i] = acc;
        acc += w[i] * values[i];
    }
    let mut below = 0.0;
    for i in 0..t {
        below += w[i] * p[i] * values[i];
        out[i] = below + p[i] * above[i];
    }
    out
}

/// `V(f, g)` for the Brownian kernel `min(s,t)` in `O(T)`.
pub fn v_form_brownian(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    let cf = brownian_apply(&f.values, f.grid);
    Ok(dot_weighted(&cf, &g.values))
}
