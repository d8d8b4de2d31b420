use gflm::eigensys::{design_matrix, empirical_eigensystem, solve_bvp_analytic};
use gflm::fit::{fit, Loss};
use gflm::funcspace::{CurveDataset, Grid, GridFunction};
use gflm::infer::{
    ci_conditional_mean, contrast_test, plrt, plrt_quadratic_form, z_quantile, IntervalOptions,
    NullValue, PlrtOptions,
};
use gflm::sim::{generate, Setting, SettingSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

/// Curves in a 5-dimensional span so the empirical system has full rank 5.
fn low_rank(n: usize, seed: u64, y: &[f64]) -> CurveDataset {
    let g = Grid::uniform(151).unwrap();
    let pts = g.points();
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let coef: Vec<f64> = (0..n * 5).map(|_| next()).collect();
    let x = DMatrix::from_fn(n, 151, |i, j| {
        (0..5)
            .map(|k| coef[i * 5 + k] * ((k as f64 + 1.0) * PI * pts[j]).cos())
            .sum()
    });
    CurveDataset::new(g, x, y.to_vec(), None).unwrap()
}

fn setting1(n: usize, seed: u64) -> CurveDataset {
    let spec = SettingSpec {
        setting: Setting::One { b: 1.0, xi: 1.0 },
        n,
        t: 201,
        seed,
    };
    generate(&spec, 0).unwrap().data
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn likelihood_plrt_equals_quadratic_form(y in prop::collection::vec(-5.0..5.0f64, 30),
                                             seed in 0u64..500, log_l in -6.0..0.0f64) {
        let d = low_rank(30, seed, &y);
        let es = empirical_eigensystem(&d, None, 2).unwrap();
        let lambda = 10f64.powf(log_l);
        let r = plrt(&d, &es, lambda, &NullValue::default(), &PlrtOptions::default()).unwrap();
        let om = design_matrix(&d, &es).unwrap();
        let q = plrt_quadratic_form(d.responses(), om.omega(), es.rho(), lambda);
        prop_assert!((r.null_params["plrt"] - q).abs() <= 1e-8 * q.abs().max(1e-300));
    }

    #[test]
    fn plrt_statistic_nonnegative(seed in 0u64..500, log_l in -7.0..0.0f64, logistic in any::<bool>(), icpt in any::<bool>()) {
        let setting = if logistic { Setting::Four { alt: true } } else { Setting::One { b: 0.5, xi: 1.0 } };
        let spec = SettingSpec { setting, n: 60, t: 201, seed };
        let d = generate(&spec, 0).unwrap().data;
        let es = solve_bvp_analytic(2, 10, d.grid()).unwrap();
        let loss = if logistic { Loss::Logistic } else { Loss::L2 };
        let opts = PlrtOptions { loss, with_intercept: icpt, ..PlrtOptions::default() };
        let r = plrt(&d, &es, 10f64.powf(log_l), &NullValue::default(), &opts).unwrap();
        prop_assert!(r.statistic >= 0.0, "{}", r.statistic);
    }

    #[test]
    fn contrast_invariant_under_rescaling(seed in 0u64..500, k in -20i32..20, c in 0.001..1000.0f64, h0 in -2.0..2.0f64) {
        let d = setting1(50, seed);
        let es = Arc::new(solve_bvp_analytic(2, 10, d.grid()).unwrap());
        let f = fit(&d, &es, 1e-4, Loss::L2, false).unwrap();
        let w = GridFunction::from_fn(d.grid(), |t| 1.0 + t * t).unwrap();
        let base = contrast_test(&f, &w, h0).unwrap();
        // powers of two rescale without rounding
        let p2 = 2f64.powi(k);
        let exact = contrast_test(&f, &w.scaled(p2), p2 * h0).unwrap();
        prop_assert_eq!(base.statistic, exact.statistic);
        let r = contrast_test(&f, &w.scaled(c), c * h0).unwrap();
        prop_assert!((base.statistic - r.statistic).abs() <= 1e-10 * (1.0 + base.statistic.abs()));
    }

    #[test]
    fn ci_width_follows_root_n(seed in 0u64..500, level in 0.5..0.999f64) {
        let d = setting1(40, seed);
        let es = Arc::new(solve_bvp_analytic(2, 10, d.grid()).unwrap());
        let f = fit(&d, &es, 1e-4, Loss::L2, false).unwrap();
        let x0 = d.curve(0);
        let ci = ci_conditional_mean(&f, &x0, level, &IntervalOptions::default()).unwrap();
        let z = z_quantile(level).unwrap();
        let formula = 2.0 * z * ci.sigma_n / (d.n() as f64).sqrt();
        prop_assert!((ci.width() - formula).abs() <= 1e-12 * formula);
        // same σ_n at 2n: the width shrinks by exactly √2
        let mut f2 = f.clone();
        f2.n *= 2;
        let ci2 = ci_conditional_mean(&f2, &x0, level, &IntervalOptions::default()).unwrap();
        prop_assert_eq!(ci2.sigma_n, ci.sigma_n);
        prop_assert!((ci.width() / ci2.width() - 2f64.sqrt()).abs() < 1e-12);
    }
}
