use gflm::adaptive::{
    adaptive_test_design, solve_bn, standardize, tau_gauss, tau_subgauss, AdaptiveConfig,
    AtCalibration, Variant,
};
use gflm::eigensys::{empirical_design, DesignMatrix};
use gflm::rng::stream_rng;
use gflm::sim::{generate, Setting, SettingSpec};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn design(n: usize, t: usize, seed: u64) -> (DesignMatrix, Vec<f64>) {
    let spec = SettingSpec {
        setting: Setting::One { b: 0.0, xi: 1.0 },
        n,
        t,
        seed,
    };
    let d = generate(&spec, 0).unwrap().data;
    let (_, om) = empirical_design(&d, None, 1).unwrap();
    (om, d.responses().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tau_invariant_under_column_sign_flips(seed in 0u64..300, mask in prop::collection::vec(any::<bool>(), 40), k in 1usize..4) {
        let (om, y) = design(40, 201, seed);
        let mut flipped = om.omega().clone();
        for (c, mut col) in flipped.column_iter_mut().enumerate() {
            if mask[c % mask.len()] {
                col.neg_mut();
            }
        }
        let fl = DesignMatrix::new(flipped).unwrap();
        prop_assert_eq!(tau_gauss(&y, &om, k, 1.0).unwrap(), tau_gauss(&y, &fl, k, 1.0).unwrap());
        prop_assert_eq!(tau_subgauss(&y, &om, k, 1.0).unwrap(), tau_subgauss(&y, &fl, k, 1.0).unwrap());
    }

    #[test]
    fn at_recomputes_from_stored_tau(seed in 0u64..300, k_n in 2usize..6, gumbel in any::<bool>()) {
        let (om, y) = design(40, 201, seed);
        let config = AdaptiveConfig {
            k_n,
            c0: 1.0,
            variant: Variant::Gauss,
            calibration: if gumbel { AtCalibration::Gumbel } else { AtCalibration::MonteCarlo { reps: 200, seed: 1 } },
        };
        let r = adaptive_test_design(&y, &om, &config, 0.05).unwrap();
        prop_assert_eq!(r.tau.len(), k_n);
        let b_n = solve_bn(k_n).unwrap();
        let (at_star, at) = standardize(&r.tau, b_n);
        prop_assert!((at - r.at).abs() <= 1e-14 * (1.0 + at.abs()));
        prop_assert!((at_star - r.at_star).abs() <= 1e-14 * (1.0 + at_star.abs()));
    }
}

#[test]
fn null_tau_moments() {
    let (om, _) = design(500, 401, 17);
    let reps = 5000;
    let mut draws = vec![Vec::with_capacity(reps); 5];
    for rep in 0..reps {
        let mut rng = stream_rng(99, rep as u64);
        let y: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        for (k, out) in draws.iter_mut().enumerate() {
            out.push(tau_gauss(&y, &om, k + 1, 1.0).unwrap());
        }
    }
    for (k, v) in draws.iter().enumerate() {
        let m = v.iter().sum::<f64>() / reps as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!(m.abs() <= 0.05, "k={}: mean {m}", k + 1);
        assert!((0.9..=1.1).contains(&var), "k={}: variance {var}", k + 1);
    }
}
