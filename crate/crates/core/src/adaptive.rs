//! Adaptive testing over smoothness levels `k = 1..k_n`.
//!
//! Each level uses the empirical eigen-design with `ρ_ν(k) = ν^{2k}` and
//! `λ_k = c0^{2k} n^{−4k/(4k+1)} (log log n)^{2k/(4k+1)}`. The standardized
//! statistics `τ_k` are maximized and recentred by `B_n`.

use crate::eigensys::{empirical_design, DesignMatrix};
use crate::error::{invalid, Error, Result};
use crate::funcspace::CurveDataset;
use crate::infer::{decisions, mc_p_value, Calibration, TestName, TestReport};
use crate::rng::{derive_seed, stream_rng};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

/// Largest `(1/n)ΩᵀΩ − I` deviation accepted by the `τ` statistics.
pub const DESIGN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gauss,
    Subgauss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AtCalibration {
    Gumbel,
    MonteCarlo { reps: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub k_n: usize,
    pub c0: f64,
    pub variant: Variant,
    pub calibration: AtCalibration,
}

/// `max(2, round((log n)^{0.4}))`.
pub fn default_kn(n: usize) -> usize {
    ((n as f64).ln().powf(0.4).round() as usize).max(2)
}

impl AdaptiveConfig {
    pub fn for_n(n: usize) -> Self {
        Self {
            k_n: default_kn(n),
            c0: 1.0,
            variant: Variant::Gauss,
            calibration: AtCalibration::MonteCarlo {
                reps: crate::infer::DEFAULT_MC_REPS,
                seed: 0,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k_n == 0 {
            return Err(invalid("k_n must be at least 1"));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(invalid(format!("c0 must be positive, got {}", self.c0)));
        }
        if self.calibration == AtCalibration::Gumbel && self.k_n < 2 {
            return Err(invalid("Gumbel calibration needs k_n >= 2"));
        }
        if let AtCalibration::MonteCarlo { reps: 0, .. } = self.calibration {
            return Err(invalid(
                "Monte Carlo calibration needs at least one replicate",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveReport {
    pub tau: Vec<f64>,
    #[serde(rename = "AT_star")]
    pub at_star: f64,
    #[serde(rename = "B_n")]
    pub b_n: f64,
    #[serde(rename = "AT")]
    pub at: f64,
    pub p_value: f64,
    pub reject_at: BTreeMap<String, bool>,
    pub alpha: f64,
    pub reject: bool,
    pub lambdas: Vec<f64>,
    pub k_n: usize,
    pub c0: f64,
    pub variant: Variant,
    pub calibration: AtCalibration,
    pub n: usize,
    pub rank: usize,
}

impl AdaptiveReport {
    pub fn to_test_report(&self) -> TestReport {
        let mut null_params = BTreeMap::new();
        null_params.insert("B_n".into(), self.b_n);
        null_params.insert("k_n".into(), self.k_n as f64);
        null_params.insert("c0".into(), self.c0);
        null_params.insert("AT_star".into(), self.at_star);
        TestReport {
            name: match self.variant {
                Variant::Gauss => TestName::AtGauss,
                Variant::Subgauss => TestName::AtSubgauss,
            },
            statistic: self.at,
            null_params,
            p_value: self.p_value,
            reject_at: self.reject_at.clone(),
            calibration: match self.calibration {
                AtCalibration::Gumbel => Calibration::Asymptotic,
                AtCalibration::MonteCarlo { reps, seed } => Calibration::MonteCarlo { reps, seed },
            },
        }
    }
}

pub fn lambda_schedule(n: usize, k: usize, c0: f64) -> Result<f64> {
    if n < 16 {
        return Err(invalid(format!(
            "the lambda schedule needs n >= 16, got {n}"
        )));
    }
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let (nf, kf) = (n as f64, k as f64);
    let e = 4.0 * kf + 1.0;
    Ok(c0.powf(2.0 * kf) * nf.powf(-4.0 * kf / e) * nf.ln().ln().powf(2.0 * kf / e))
}

/// `d_ν(k) = 1/(1 + λ_k ν^{2k})` for `ν = 1..r`.
fn damping(r: usize, k: usize, lambda: f64) -> Vec<f64> {
    (1..=r)
        .map(|nu| 1.0 / (1.0 + lambda * (nu as f64).powi(2 * k as i32)))
        .collect()
}

fn check_design(omega: &DesignMatrix, y: &[f64]) -> Result<()> {
    if y.len() != omega.n() {
        return Err(invalid(format!(
            "{} responses for {} design rows",
            y.len(),
            omega.n()
        )));
    }
    let deviation = omega.orthonormality_deviation();
    if !(deviation <= DESIGN_TOL) {
        return Err(Error::Design { deviation });
    }
    Ok(())
}

/// `η̂ = n^{−1/2} ΩᵀY`.
fn scores(y: &[f64], omega: &DesignMatrix) -> DVector<f64> {
    omega.omega().transpose() * DVector::from_column_slice(y) / (omega.n() as f64).sqrt()
}

/// Precomputed per-level quantities on a fixed design.
struct Levels {
    d: Vec<Vec<f64>>,
    sum_d: Vec<f64>,
    denom: Vec<f64>,
}

impl Levels {
    fn new(omega: &DesignMatrix, k_n: usize, c0: f64, variant: Variant) -> Result<Self> {
        let mut out = Levels {
            d: Vec::with_capacity(k_n),
            sum_d: Vec::with_capacity(k_n),
            denom: Vec::with_capacity(k_n),
        };
        for k in 1..=k_n {
            let d = damping(omega.ncols(), k, lambda_schedule(omega.n(), k, c0)?);
            let one = Levels::from_damping(omega, d, variant)?;
            out.d.extend(one.d);
            out.sum_d.extend(one.sum_d);
            out.denom.extend(one.denom);
        }
        Ok(out)
    }

    fn taus(&self, eta: &DVector<f64>) -> Vec<f64> {
        (0..self.d.len())
            .map(|k| {
                let q: f64 = self.d[k]
                    .iter()
                    .zip(eta.iter())
                    .map(|(d, e)| d * e * e)
                    .sum();
                (q - self.sum_d[k]) / self.denom[k]
            })
            .collect()
    }
}

/// `−2n·PLRT_k = Σ_ν d_ν(k) η̂_ν²`.
pub fn minus_two_n_plrt(y: &[f64], omega: &DesignMatrix, k: usize, c0: f64) -> Result<f64> {
    check_design(omega, y)?;
    let eta = scores(y, omega);
    let d = damping(omega.ncols(), k, lambda_schedule(omega.n(), k, c0)?);
    Ok(d.iter().zip(eta.iter()).map(|(d, e)| d * e * e).sum())
}

pub fn tau_gauss(y: &[f64], omega: &DesignMatrix, k: usize, c0: f64) -> Result<f64> {
    tau_level(y, omega, k, c0, Variant::Gauss)
}

pub fn tau_subgauss(y: &[f64], omega: &DesignMatrix, k: usize, c0: f64) -> Result<f64> {
    tau_level(y, omega, k, c0, Variant::Subgauss)
}

fn tau_level(y: &[f64], omega: &DesignMatrix, k: usize, c0: f64, variant: Variant) -> Result<f64> {
    check_design(omega, y)?;
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let n = omega.n();
    let d = damping(omega.ncols(), k, lambda_schedule(n, k, c0)?);
    let single = Levels::from_damping(omega, d, variant)?;
    Ok(single.taus(&scores(y, omega))[0])
}

impl Levels {
    fn from_damping(omega: &DesignMatrix, d: Vec<f64>, variant: Variant) -> Result<Self> {
        let (n, r) = (omega.n(), omega.ncols());
        let sum_d: f64 = d.iter().sum();
        let sum_d2: f64 = d.iter().map(|v| v * v).sum();
        let var = match variant {
            Variant::Gauss => 2.0 * sum_d2,
            Variant::Subgauss => {
                let om = omega.omega();
                let diag_sq: f64 = (0..n)
                    .map(|i| {
                        let a: f64 = (0..r).map(|nu| om[(i, nu)].powi(2) * d[nu]).sum();
                        (a / n as f64).powi(2)
                    })
                    .sum();
                let off = sum_d2 - diag_sq;
                if !(off > 1e-12 * sum_d2) {
                    return Err(Error::DegenerateStatistic(
                        "off-diagonal mass of A_k vanishes".into(),
                    ));
                }
                2.0 * off
            }
        };
        Ok(Levels {
            d: vec![d],
            sum_d: vec![sum_d],
            denom: vec![var.sqrt()],
        })
    }
}

/// Positive root of `2π B² exp(B²) = k_n²`.
pub fn solve_bn(k_n: usize) -> Result<f64> {
    if k_n == 0 {
        return Err(invalid("k_n must be at least 1"));
    }
    // in x = B²: g(x) = log(2π) + log x + x − 2 log k_n, increasing
    let target = 2.0 * (k_n as f64).ln() - (2.0 * std::f64::consts::PI).ln();
    let g = |x: f64| x.ln() + x - target;
    let (mut lo, mut hi) = (1e-12_f64, target.max(1.0) + 1.0);
    let mut x = if target > 1.0 {
        target - target.ln()
    } else {
        0.5
    };
    for _ in 0..200 {
        let gx = g(x);
        if gx.abs() < 1e-15 * target.abs().max(1.0) {
            break;
        }
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - gx / (1.0 / x + 1.0);
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x.sqrt())
}

/// `c_α = −log(−log(1−α))`.
pub fn gumbel_critical(alpha: f64) -> f64 {
    -(-(1.0 - alpha).ln()).ln()
}

/// `1 − exp(−exp(−AT))`.
pub fn gumbel_p_value(at: f64) -> f64 {
    -(-(-at).exp()).exp_m1()
}

/// `(AT*, AT)` from the level statistics.
pub fn standardize(tau: &[f64], b_n: f64) -> (f64, f64) {
    let at_star = tau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (at_star, b_n * (at_star - b_n))
}

type NullKey = (usize, usize, usize, u64, usize, u64);

fn null_cache() -> &'static Mutex<HashMap<NullKey, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<NullKey, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

const MC_TAG: u64 = 0x6164_6170;

/// Null draws of `AT` with Gaussian noise. With `ΩᵀΩ = nI` the scores
/// `n^{−1/2}ΩᵀY` are exactly standard normal, so they are drawn directly.
fn gauss_null(
    levels: &Levels,
    n: usize,
    c0: f64,
    b_n: f64,
    reps: usize,
    seed: u64,
) -> Arc<Vec<f64>> {
    let r = levels.d[0].len();
    let key = (n, r, levels.d.len(), c0.to_bits(), reps, seed);
    if let Some(v) = null_cache().lock().expect("cache lock").get(&key) {
        return v.clone();
    }
    let stream = derive_seed(seed, MC_TAG);
    let draws: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(stream, rep as u64);
            let eta = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
            standardize(&levels.taus(&eta), b_n).1
        })
        .collect();
    let draws = Arc::new(draws);
    null_cache()
        .lock()
        .expect("cache lock")
        .insert(key, draws.clone());
    draws
}

/// Null draws of `AT` with Rademacher noise through the actual design.
fn subgauss_null(
    levels: &Levels,
    omega: &DesignMatrix,
    b_n: f64,
    reps: usize,
    seed: u64,
) -> Vec<f64> {
    let stream = derive_seed(seed, MC_TAG ^ 1);
    let n = omega.n();
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(stream, rep as u64);
            let y: Vec<f64> = (0..n)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            standardize(&levels.taus(&scores(&y, omega)), b_n).1
        })
        .collect()
}

/// Adaptive test on a precomputed empirical design.
pub fn adaptive_test_design(
    y: &[f64],
    omega: &DesignMatrix,
    config: &AdaptiveConfig,
    alpha: f64,
) -> Result<AdaptiveReport> {
    config.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    check_design(omega, y)?;
    let n = omega.n();
    let levels = Levels::new(omega, config.k_n, config.c0, config.variant)?;
    let tau = levels.taus(&scores(y, omega));
    let b_n = solve_bn(config.k_n)?;
    let (at_star, at) = standardize(&tau, b_n);
    let (p_value, reject) = match config.calibration {
        AtCalibration::Gumbel => (gumbel_p_value(at), at > gumbel_critical(alpha)),
        AtCalibration::MonteCarlo { reps, seed } => {
            let p = match config.variant {
                Variant::Gauss => {
                    mc_p_value(at, &gauss_null(&levels, n, config.c0, b_n, reps, seed))
                }
                Variant::Subgauss => {
                    mc_p_value(at, &subgauss_null(&levels, omega, b_n, reps, seed))
                }
            };
            (p, p <= alpha)
        }
    };
    let lambdas = (1..=config.k_n)
        .map(|k| lambda_schedule(n, k, config.c0))
        .collect::<Result<Vec<_>>>()?;
    Ok(AdaptiveReport {
        tau,
        at_star,
        b_n,
        at,
        p_value,
        reject_at: decisions(p_value),
        alpha,
        reject,
        lambdas,
        k_n: config.k_n,
        c0: config.c0,
        variant: config.variant,
        calibration: config.calibration,
        n,
        rank: omega.ncols(),
    })
}

/// Builds the empirical eigen-design from `data` and runs the adaptive test.
pub fn adaptive_test(
    data: &CurveDataset,
    config: &AdaptiveConfig,
    alpha: f64,
) -> Result<AdaptiveReport> {
    if data.n() < 16 {
        return Err(invalid(format!(
            "adaptive testing needs n >= 16, got {}",
            data.n()
        )));
    }
    let (_, omega) = empirical_design(data, None, 1)?;
    adaptive_test_design(data.responses(), &omega, config, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentDiagnostic {
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// `max_ν Σ_i ω_iν⁴` against `n^{8/5} (log log n)^{−14/5}`.
pub fn moment_diagnostic(omega: &DesignMatrix) -> MomentDiagnostic {
    let om = omega.omega();
    let value = om
        .column_iter()
        .map(|c| c.iter().map(|v| v.powi(4)).sum::<f64>())
        .fold(0.0, f64::max);
    let n = omega.n() as f64;
    let ll = n.ln().ln();
    let threshold = if ll > 0.0 {
        n.powf(1.6) * ll.powf(-2.8)
    } else {
        f64::INFINITY
    };
    MomentDiagnostic {
        value,
        threshold,
        pass: value < threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn spiked(n: usize) -> DesignMatrix {
        DesignMatrix::new(DMatrix::identity(n, n) * (n as f64).sqrt()).unwrap()
    }

    /// Orthogonal design from a Hadamard-like sign matrix scaled to `ΩᵀΩ = nI`.
    fn flat(n: usize) -> DesignMatrix {
        // Sylvester construction, n a power of two
        let mut h = DMatrix::from_element(1, 1, 1.0);
        while h.nrows() < n {
            let s = h.nrows();
            let mut g = DMatrix::zeros(2 * s, 2 * s);
            g.view_mut((0, 0), (s, s)).copy_from(&h);
            g.view_mut((0, s), (s, s)).copy_from(&h);
            g.view_mut((s, 0), (s, s)).copy_from(&h);
            g.view_mut((s, s), (s, s)).copy_from(&(-&h));
            h = g;
        }
        DesignMatrix::new(h).unwrap()
    }

    #[test]
    fn schedule_formula() {
        let v = lambda_schedule(100, 1, 1.0).unwrap();
        let oracle = 100f64.powf(-0.8) * 100f64.ln().ln().powf(0.4);
        assert!((v - oracle).abs() < 1e-15 * oracle);
        assert!(lambda_schedule(15, 1, 1.0).is_err());
        for k in 1..4 {
            let a = lambda_schedule(200, k, 1.0).unwrap();
            let b = lambda_schedule(200, k, 2.0).unwrap();
            assert!((b / a - 4f64.powi(k as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_decreasing_in_n() {
        for k in 1..=5 {
            let mut prev = f64::INFINITY;
            let mut n = 16;
            while n <= 1_000_000 {
                let v = lambda_schedule(n, k, 1.0).unwrap();
                assert!(v < prev, "k={k} n={n}");
                prev = v;
                n = n * 3 / 2 + 1;
            }
        }
    }

    #[test]
    fn bn_solves_equation() {
        for k in [1usize, 2, 3, 5, 10, 100, 10_000] {
            let b = solve_bn(k).unwrap();
            let lhs = 2.0 * std::f64::consts::PI * b * b * (b * b).exp();
            let rhs = (k * k) as f64;
            assert!(((lhs - rhs) / rhs).abs() < 1e-12, "{k}");
        }
    }

    #[test]
    fn bn_matches_bisection_at_ten() {
        let f = |b: f64| 2.0 * std::f64::consts::PI * b * b * (b * b).exp() - 100.0;
        let (mut lo, mut hi) = (0.5, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        assert!((solve_bn(10).unwrap() - lo).abs() < 1e-12);
    }

    #[test]
    fn bn_monotone_and_asymptote() {
        let mut prev = 0.0;
        for k in 1..200 {
            let b = solve_bn(k).unwrap();
            assert!(b > prev);
            prev = b;
        }
        // B_n = √(2 log k) − (log log k + log 4π)/(2√(2 log k)) + o(·)
        let mut prev_ratio = 0.0;
        for k in [100usize, 10_000, 1_000_000, 100_000_000] {
            let b = solve_bn(k).unwrap();
            let s = (2.0 * (k as f64).ln()).sqrt();
            let approx = s - ((k as f64).ln().ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * s);
            assert!((b - approx).abs() < 0.05 * b, "{k}: {b} {approx}");
            let ratio = b / s;
            assert!(ratio > prev_ratio);
            prev_ratio = ratio;
        }
    }

    #[test]
    fn gumbel_values() {
        assert!((gumbel_critical(0.05) - 2.9701952).abs() < 1e-6);
        assert!((gumbel_p_value(gumbel_critical(0.05)) - 0.05).abs() < 1e-14);
    }

    #[test]
    fn unpenalized_limit() {
        let n = 64;
        let om = flat(n);
        let mut rng = stream_rng(1, 0);
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let t = tau_gauss(&y, &om, 1, 1e-12).unwrap();
        let eta = scores(&y, &om);
        let expect = (eta.norm_squared() - n as f64) / (2.0 * n as f64).sqrt();
        assert!((t - expect).abs() < 1e-9);
    }

    #[test]
    fn spiked_design_degenerate() {
        let om = spiked(32);
        let y = vec![1.0; 32];
        assert!(matches!(
            tau_subgauss(&y, &om, 2, 1.0),
            Err(Error::DegenerateStatistic(_))
        ));
        assert!(tau_gauss(&y, &om, 2, 1.0).is_ok());
    }

    #[test]
    fn design_tolerance_enforced() {
        let mut m = DMatrix::identity(20, 20) * 20f64.sqrt();
        m[(0, 1)] = 0.5;
        let om = DesignMatrix::new(m).unwrap();
        assert!(matches!(
            tau_gauss(&[0.0; 20], &om, 1, 1.0),
            Err(Error::Design { .. })
        ));
    }

    #[test]
    fn moment_diagnostic_cases() {
        for n in [16usize, 64, 256] {
            let d = moment_diagnostic(&spiked(n));
            assert_eq!(d.value, (n * n) as f64);
            assert!(!d.pass);
        }
        for n in [16usize, 64, 256] {
            let d = moment_diagnostic(&flat(n));
            assert!((d.value - n as f64).abs() < 1e-9);
            assert!(d.pass);
        }
    }

    #[test]
    fn denominator_identity() {
        // 2Σ_{i≠j} a_ij² = 2‖A‖_F² − 2Σ a_ii² with ‖A‖_F² = Σ d_ν²
        let n = 32;
        let mut rng = stream_rng(4, 0);
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q() * (n as f64).sqrt();
        let om = DesignMatrix::new(q.clone()).unwrap();
        let lambda = lambda_schedule(n, 2, 1.0).unwrap();
        let d = damping(n, 2, lambda);
        let a =
            &q * DMatrix::from_diagonal(&DVector::from_vec(d.clone())) * q.transpose() / n as f64;
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        let fro: f64 = a.iter().map(|v| v * v).sum();
        let sum_d2: f64 = d.iter().map(|v| v * v).sum();
        assert!((fro - sum_d2).abs() < 1e-10 * sum_d2);
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let tg = tau_gauss(&y, &om, 2, 1.0).unwrap();
        let ts = tau_subgauss(&y, &om, 2, 1.0).unwrap();
        let ratio = (2.0 * sum_d2).sqrt() / (2.0 * off).sqrt();
        assert!((ts / tg - ratio).abs() < 1e-9 * ratio);
    }

    #[test]
    fn at_recomputes_from_tau() {
        let n = 64;
        let om = flat(n);
        let mut rng = stream_rng(5, 0);
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let cfg = AdaptiveConfig {
            k_n: 4,
            c0: 1.0,
            variant: Variant::Gauss,
            calibration: AtCalibration::Gumbel,
        };
        let rep = adaptive_test_design(&y, &om, &cfg, 0.05).unwrap();
        let (star, at) = standardize(&rep.tau, solve_bn(4).unwrap());
        assert_eq!(star, rep.at_star);
        assert!((at - rep.at).abs() < 1e-14);
        assert_eq!(rep.reject, rep.at > gumbel_critical(0.05));
    }

    #[test]
    fn gumbel_rejects_small_kn() {
        let cfg = AdaptiveConfig {
            k_n: 1,
            c0: 1.0,
            variant: Variant::Gauss,
            calibration: AtCalibration::Gumbel,
        };
        assert!(adaptive_test_design(&[0.0; 16], &flat(16), &cfg, 0.05).is_err());
    }

    #[test]
    fn default_kn_values() {
        assert_eq!(default_kn(100), 2);
        assert_eq!(default_kn(500), 2);
        assert_eq!(default_kn(16), 2);
    }
}
