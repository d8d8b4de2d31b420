use gflm::funcspace::{
    empirical_cov, integrate, penalty_j, v_form, CovKernel, CurveDataset, Grid, GridFunction,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn poly(grid: Grid, c: &[f64]) -> GridFunction {
    GridFunction::from_fn(grid, |t| c.iter().rev().fold(0.0, |acc, a| acc * t + a)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integrate_exact_on_affine(a in -10.0..10.0f64, b in -10.0..10.0f64, t in 3usize..400) {
        let g = Grid::uniform(t).unwrap();
        let f = poly(g, &[a, b]);
        prop_assert!((integrate(&f) - (a + b / 2.0)).abs() < 1e-12 * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn penalty_symmetric(c1 in prop::collection::vec(-3.0..3.0f64, 6),
                         c2 in prop::collection::vec(-3.0..3.0f64, 6),
                         m in 1usize..3) {
        let g = Grid::uniform(301).unwrap();
        let (f, h) = (poly(g, &c1), poly(g, &c2));
        let a = penalty_j(&f, &h, m).unwrap();
        let b = penalty_j(&h, &f, m).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300));
    }

    #[test]
    fn v_form_nonnegative_on_psd_kernels(seed_rows in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 41), 1..6),
                                         f in prop::collection::vec(-5.0..5.0f64, 41)) {
        let g = Grid::uniform(41).unwrap();
        // C = Σ_r a_r a_rᵀ is symmetric PSD
        let mut c = DMatrix::zeros(41, 41);
        for r in &seed_rows {
            let a = nalgebra::DVector::from_column_slice(r);
            c += &a * a.transpose();
        }
        let k = CovKernel::new(g, c).unwrap();
        let f = GridFunction::new(g, f).unwrap();
        prop_assert!(v_form(&k, &f, &f).unwrap() >= -1e-10);
    }

    #[test]
    fn empirical_cov_row_permutation_invariant(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 21), 2..8),
                                               rot in 0usize..8) {
        let g = Grid::uniform(21).unwrap();
        let n = rows.len();
        let x = DMatrix::from_fn(n, 21, |i, j| rows[i][j]);
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).rev().collect();
        let xp = DMatrix::from_fn(n, 21, |i, j| rows[perm[i]][j]);
        let a = empirical_cov(&CurveDataset::new(g, x, vec![0.0; n], None).unwrap()).unwrap();
        let b = empirical_cov(&CurveDataset::new(g, xp, vec![0.0; n], None).unwrap()).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }
}

#[test]
fn trapezoid_error_is_second_order() {
    let f = |t: f64| (3.0 * t).sin() + t * t * t;
    let exact = (1.0 - 3f64.cos()) / 3.0 + 0.25;
    let err = |t: usize| {
        let g = Grid::uniform(t).unwrap();
        (integrate(&GridFunction::from_fn(g, f).unwrap()) - exact).abs()
    };
    for t in [11, 41, 161] {
        let ratio = err(t) / err(2 * t - 1);
        assert!((ratio - 4.0).abs() < 0.1, "{t}: {ratio}");
    }
}
