use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Cholesky solver for symmetric positive definite systems with Jacobi scaling.
///
/// Penalized normal matrices mix entries of order `n` with penalties of
/// order `nλρ_N`, which can differ by many decades; scaling to unit diagonal
/// first keeps the factorization well conditioned.
pub(crate) struct SpdSolver {
    chol: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
}

impl SpdSolver {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let mut scale = DVector::zeros(n);
        for i in 0..n {
            let d = a[(i, i)];
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Singular(format!(
                    "non-positive pivot {d:.3e} at {i}"
                )));
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * scale[i] * scale[j]);
        let chol = Cholesky::new(scaled)
            .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..n {
            lo = lo.min(l[(i, i)].abs());
            hi = hi.max(l[(i, i)].abs());
        }
        if n > 0 && !(lo > 1e-7 * hi) {
            return Err(Error::Singular(format!(
                "numerically singular (pivot ratio {:.3e})",
                lo / hi
            )));
        }
        Ok(Self { chol, scale })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let sb = b.component_mul(&self.scale);
        let x = self.chol.solve(&sb);
        x.component_mul(&self.scale)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut sb = b.clone();
        for (i, mut r) in sb.row_iter_mut().enumerate() {
            r *= self.scale[i];
        }
        let mut x = self.chol.solve(&sb);
        for (i, mut r) in x.row_iter_mut().enumerate() {
            r *= self.scale[i];
        }
        x
    }
}

/// Pivoted Cholesky `G ≈ L Lᵀ` of a symmetric positive semi-definite matrix,
/// stopping when the largest remaining diagonal falls below `rel_tol · max diag`.
pub(crate) fn pivoted_cholesky(g: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = g.nrows();
    let mut d: Vec<f64> = (0..n).map(|i| g[(i, i)]).collect();
    let dmax = d.iter().cloned().fold(0.0_f64, f64::max);
    let tol = rel_tol * dmax;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut used = vec![false; n];
    if dmax <= 0.0 {
        return DMatrix::zeros(n, 0);
    }
    loop {
        let mut p = usize::MAX;
        let mut best = tol;
        for i in 0..n {
            if !used[i] && d[i] > best {
                best = d[i];
                p = i;
            }
        }
        if p == usize::MAX {
            break;
        }
        used[p] = true;
        let piv = d[p].sqrt();
        let mut col = vec![0.0; n];
        for i in 0..n {
            if used[i] && i != p {
                continue;
            }
            let mut v = g[(i, p)];
            for c in &cols {
                v -= c[i] * c[p];
            }
            col[i] = v / piv;
        }
        col[p] = piv;
        for i in 0..n {
            if !used[i] {
                d[i] -= col[i] * col[i];
            }
        }
        d[p] = 0.0;
        cols.push(col);
        if cols.len() == n {
            break;
        }
    }
    let r = cols.len();
    DMatrix::from_fn(n, r, |i, j| cols[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_matches_direct() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1e6]);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let s = SpdSolver::new(&a).unwrap();
        let x = s.solve(&b);
        assert!((&a * &x - &b).amax() < 1e-9);
        let xm = s.solve_mat(&DMatrix::from_columns(&[b.clone(), b.clone() * 2.0]));
        assert!((xm.column(1) - &x * 2.0).amax() < 1e-12);
    }

    #[test]
    fn pivoted_cholesky_reconstructs_low_rank() {
        let u = DMatrix::from_fn(6, 2, |i, j| ((i + 1) as f64).powi(j as i32 + 1).sin());
        let g = &u * u.transpose();
        let l = pivoted_cholesky(&g, 1e-13);
        assert_eq!(l.ncols(), 2);
        assert!((&l * l.transpose() - &g).amax() < 1e-12);
    }
}
