//! Data generators for the four simulation settings and a seeded trial runner.

use crate::adaptive::{adaptive_test_design, default_kn, AdaptiveConfig, AtCalibration, Variant};
use crate::eigensys::{
    design_matrix, empirical_design, plugin_kernel_scale, solve_bvp_analytic, EigenSystem,
};
use crate::error::{invalid, Error, Result};
use crate::fit::{default_lambda_grid, fit, gcv_on_design, sigmoid, Loss};
use crate::funcspace::{inner_product, CurveDataset, Grid, GridFunction};
use crate::infer::{
    ci_conditional_mean, contrast_test, plrt, pointwise_ci_slope, prediction_interval, Calibration,
    IntervalOptions, NullValue, PlrtOptions, DEFAULT_MC_REPS,
};
use crate::rng::{derive_seed, stream_rng};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_TRIALS: usize = 2000;
/// Number of terms in the simulated Karhunen–Loève expansions.
pub const KL_TERMS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model3 {
    #[serde(rename = "(2,1)")]
    TwoOne,
    #[serde(rename = "(9,2)")]
    NineTwo,
}

impl Model3 {
    /// `(support size, number of multinomial draws)`.
    fn shape(self) -> (usize, usize) {
        match self {
            Model3::TwoOne => (2, 1),
            Model3::NineTwo => (9, 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "setting")]
pub enum Setting {
    #[serde(rename = "1")]
    One { b: f64, xi: f64 },
    #[serde(rename = "2")]
    Two { b: f64, tau: f64 },
    #[serde(rename = "3")]
    Three { model: Model3, r2: f64 },
    #[serde(rename = "4")]
    Four { alt: bool },
}

impl Setting {
    pub fn label(&self) -> String {
        match self {
            Setting::One { .. } => "1".into(),
            Setting::Two { .. } => "2".into(),
            Setting::Three {
                model: Model3::TwoOne,
                ..
            } => "3-(2,1)".into(),
            Setting::Three {
                model: Model3::NineTwo,
                ..
            } => "3-(9,2)".into(),
            Setting::Four { .. } => "4".into(),
        }
    }

    pub fn params(&self) -> String {
        match self {
            Setting::One { b, xi } => format!("B={b};xi={xi}"),
            Setting::Two { b, tau } => format!("B={b};tau={tau}"),
            Setting::Three { r2, .. } => format!("r2={r2}"),
            Setting::Four { alt } => if *alt { "alt" } else { "null" }.into(),
        }
    }

    pub fn loss(&self) -> Loss {
        match self {
            Setting::Four { .. } => Loss::Logistic,
            _ => Loss::L2,
        }
    }

    /// `true` when a parameter lies outside the tabulated menus.
    pub fn is_extrapolation(&self) -> bool {
        let within = |v: f64, menu: &[f64]| menu.iter().any(|m| (m - v).abs() < 1e-12);
        match *self {
            Setting::One { b, xi } => {
                !(within(b, &[0.0, 0.1, 0.5, 1.0]) && within(xi, &[0.1, 0.5, 1.0]))
            }
            Setting::Two { b, tau } => {
                !(within(b, &[0.0, 0.5, 1.0, 2.0]) && within(tau, &[0.01, 0.02, 0.05]))
            }
            Setting::Three { r2, .. } => !within(r2, &[0.0, 0.1, 0.2, 0.5, 1.5]),
            Setting::Four { .. } => false,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Setting::One { b, xi } => b >= 0.0 && b.is_finite() && xi > 0.0 && xi.is_finite(),
            Setting::Two { b, tau } => b >= 0.0 && b.is_finite() && tau > 0.0 && tau.is_finite(),
            Setting::Three { r2, .. } => r2 >= 0.0 && r2.is_finite(),
            Setting::Four { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid signal parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    #[serde(flatten)]
    pub setting: Setting,
    pub n: usize,
    pub t: usize,
    pub seed: u64,
}

impl SettingSpec {
    pub fn new(setting: Setting, n: usize, seed: u64) -> Self {
        Self {
            setting,
            n,
            t: DEFAULT_T,
            seed,
        }
    }
}

/// A simulated sample together with the slope that generated it.
#[derive(Debug, Clone)]
pub struct SimData {
    pub data: CurveDataset,
    pub beta0: GridFunction,
}

/// `Σ_{k≥1} k^{−s}`: partial sum to 10⁶ plus the midpoint tail `∫_{K+1/2}^∞ x^{−s} dx`.
pub fn zeta_truncated(s: f64) -> f64 {
    const K: usize = 1_000_000;
    let head: f64 = (1..=K).rev().map(|k| (k as f64).powf(-s)).sum();
    head + (K as f64 + 0.5).powf(1.0 - s) / (s - 1.0)
}

enum Scores {
    Normal,
    /// Standard normals clamped to `[−0.5, 0.5]`.
    Truncated,
}

enum Slope {
    Fixed(GridFunction),
    Random {
        model: Model3,
        r: f64,
        basis: DMatrix<f64>,
    },
}

/// Prepared generator: eigen-basis on the grid and the slope recipe.
pub struct Generator {
    grid: Grid,
    /// `√κ_j ψ_j(t)`, one row per term.
    scaled_basis: DMatrix<f64>,
    scores: Scores,
    slope: Slope,
    loss: Loss,
}

fn sine_basis(grid: Grid) -> (Vec<f64>, DMatrix<f64>) {
    let t = grid.points();
    let kappa: Vec<f64> = (1..=KL_TERMS)
        .map(|j| 1.0 / ((j as f64 - 0.5).powi(2) * PI * PI))
        .collect();
    let basis = DMatrix::from_fn(KL_TERMS, grid.len(), |j, i| {
        SQRT_2 * ((j as f64 + 0.5) * PI * t[i]).sin()
    });
    (kappa, basis)
}

fn cosine_basis(grid: Grid) -> (Vec<f64>, DMatrix<f64>) {
    let t = grid.points();
    let kappa: Vec<f64> = (1..=KL_TERMS).map(|j| (j as f64).powf(-1.7)).collect();
    let basis = DMatrix::from_fn(KL_TERMS, grid.len(), |j, i| {
        if j == 0 {
            1.0
        } else {
            SQRT_2 * (j as f64 * PI * t[i]).cos()
        }
    });
    (kappa, basis)
}

fn scale_rows(kappa: &[f64], basis: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = basis.clone();
    for (j, mut row) in out.row_iter_mut().enumerate() {
        row *= kappa[j].sqrt();
    }
    out
}

impl Generator {
    pub fn new(setting: Setting, t: usize) -> Result<Self> {
        setting.validate()?;
        let grid = Grid::uniform(t)?;
        let pts = grid.points();
        let (scaled_basis, scores, slope) = match setting {
            Setting::One { b, xi } => {
                let (kappa, basis) = sine_basis(grid);
                let norm = b / zeta_truncated(2.0 * xi + 1.0).sqrt();
                let mut beta = vec![0.0; t];
                for j in 0..KL_TERMS {
                    let c = norm * (j as f64 + 1.0).powf(-xi - 0.5);
                    for (i, v) in beta.iter_mut().enumerate() {
                        *v += c * basis[(j, i)];
                    }
                }
                (
                    scale_rows(&kappa, &basis),
                    Scores::Normal,
                    Slope::Fixed(GridFunction::new(grid, beta)?),
                )
            }
            Setting::Two { b, tau } => {
                let (kappa, basis) = sine_basis(grid);
                // ∫_0^1 exp{−(x−0.5)²/τ²} dx = τ√π erf(0.5/τ)
                let mass = tau * PI.sqrt() * statrs::function::erf::erf(0.5 / tau);
                let beta = GridFunction::from_fn(grid, |t| {
                    b * (-(t - 0.5).powi(2) / (2.0 * tau * tau)).exp() / mass.sqrt()
                })?;
                (
                    scale_rows(&kappa, &basis),
                    Scores::Normal,
                    Slope::Fixed(beta),
                )
            }
            Setting::Three { model, r2 } => {
                let (kappa, basis) = cosine_basis(grid);
                let (support, _) = model.shape();
                let lead = basis.rows(0, support).into_owned();
                (
                    scale_rows(&kappa, &basis),
                    Scores::Normal,
                    Slope::Random {
                        model,
                        r: r2.sqrt(),
                        basis: lead,
                    },
                )
            }
            Setting::Four { alt } => {
                let (kappa, basis) = sine_basis(grid);
                let beta: Vec<f64> = pts
                    .iter()
                    .map(|&t| {
                        if alt {
                            3e5 * t.powi(11) * (1.0 - t).powi(6)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (
                    scale_rows(&kappa, &basis),
                    Scores::Truncated,
                    Slope::Fixed(GridFunction::new(grid, beta)?),
                )
            }
        };
        Ok(Self {
            grid,
            scaled_basis,
            scores,
            slope,
            loss: setting.loss(),
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn draw_score(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match self.scores {
            Scores::Normal => z,
            Scores::Truncated => z.clamp(-0.5, 0.5),
        }
    }

    /// `n` curves as rows.
    pub fn draw_curves(&self, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let eta = DMatrix::from_fn(n, KL_TERMS, |_, _| self.draw_score(rng));
        eta * &self.scaled_basis
    }

    /// `θ̄_j = b_j I_j` on the leading terms, normalized, times `r`.
    fn draw_slope(&self, rng: &mut ChaCha8Rng) -> Result<GridFunction> {
        match &self.slope {
            Slope::Fixed(b) => Ok(b.clone()),
            Slope::Random { model, r, basis } => {
                let (support, draws) = model.shape();
                let mut counts = vec![0usize; support];
                for _ in 0..draws {
                    counts[rng.random_range(0..support)] += 1;
                }
                // Unif(0,1] so the selected coefficients are nonzero
                let theta_bar: Vec<f64> = counts
                    .iter()
                    .map(|&c| (1.0 - rng.random::<f64>()) * c as f64)
                    .collect();
                let norm = theta_bar.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut beta = vec![0.0; self.grid.len()];
                for (j, th) in theta_bar.iter().enumerate() {
                    let c = r * th / norm;
                    for (i, v) in beta.iter_mut().enumerate() {
                        *v += c * basis[(j, i)];
                    }
                }
                GridFunction::new(self.grid, beta)
            }
        }
    }

    fn response(&self, mu: f64, rng: &mut ChaCha8Rng) -> f64 {
        match self.loss {
            Loss::L2 => mu + rng.sample::<f64, _>(StandardNormal),
            Loss::Logistic => f64::from(rng.random::<f64>() < sigmoid(mu)),
        }
    }

    /// Slope, curves and responses, drawn in that order from `rng`.
    pub fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<SimData> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let beta0 = self.draw_slope(rng)?;
        let x = self.draw_curves(n, rng);
        let q = self.grid.weights();
        let qb: Vec<f64> = beta0.values().iter().zip(&q).map(|(b, q)| b * q).collect();
        let mu = &x * nalgebra::DVector::from_vec(qb);
        let y: Vec<f64> = mu.iter().map(|m| self.response(*m, rng)).collect();
        Ok(SimData {
            data: CurveDataset::new(self.grid, x, y, None)?,
            beta0,
        })
    }
}

/// Sample `trial` of a specification.
pub fn generate(spec: &SettingSpec, trial: u64) -> Result<SimData> {
    let g = Generator::new(spec.setting, spec.t)?;
    g.draw(spec.n, &mut stream_rng(spec.seed, trial))
}

pub fn gen_setting1(n: usize, b: f64, xi: f64, seed: u64) -> Result<SimData> {
    generate(&SettingSpec::new(Setting::One { b, xi }, n, seed), 0)
}

pub fn gen_setting2(n: usize, b: f64, tau: f64, seed: u64) -> Result<SimData> {
    generate(&SettingSpec::new(Setting::Two { b, tau }, n, seed), 0)
}

pub fn gen_setting3(n: usize, model: Model3, r2: f64, seed: u64) -> Result<SimData> {
    generate(&SettingSpec::new(Setting::Three { model, r2 }, n, seed), 0)
}

pub fn gen_setting4(n: usize, alt: bool, seed: u64) -> Result<SimData> {
    generate(&SettingSpec::new(Setting::Four { alt }, n, seed), 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// PLRT of `β = 0`, GCV λ, χ² calibration.
    Plrt,
    /// Adaptive test, Gaussian variant, Monte Carlo calibration.
    At,
    /// Adaptive test, Gaussian variant, Gumbel calibration.
    AtGumbel,
    /// Non-coverage of the conditional-mean interval at a fresh curve.
    Ci,
    /// Non-coverage of the prediction interval at a fresh curve.
    Pi,
    /// Non-coverage of the pointwise slope interval (undersmoothed λ).
    SlopeCi,
    /// Rejection rate of the contrast test of `∫β` at its true value.
    Ct,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Plrt => "plrt",
            Method::At => "at",
            Method::AtGumbel => "at-gumbel",
            Method::Ci => "ci",
            Method::Pi => "pi",
            Method::SlopeCi => "slope-ci",
            Method::Ct => "ct",
        }
    }

    pub const ALL: [Method; 7] = [
        Method::Plrt,
        Method::At,
        Method::AtGumbel,
        Method::Ci,
        Method::Pi,
        Method::SlopeCi,
        Method::Ct,
    ];

    fn needs_fit(self) -> bool {
        !matches!(self, Method::At | Method::AtGumbel)
    }

    fn gaussian_only(self) -> bool {
        !matches!(self, Method::Plrt)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessOptions {
    pub alpha: f64,
    pub at_reps: usize,
    pub lambda_grid: Vec<f64>,
    /// Cap on penalized analytic eigenfunctions (the basis uses `min(n, cap)`).
    pub max_penalized: usize,
    pub slope_point: f64,
    /// Multiplier on the GCV λ for the pointwise slope interval.
    pub undersmooth: f64,
    pub k_n: Option<usize>,
    pub c0: f64,
    pub interval: IntervalOptions,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            at_reps: DEFAULT_MC_REPS,
            lambda_grid: default_lambda_grid(),
            max_penalized: 50,
            slope_point: 0.5,
            undersmooth: 0.01,
            k_n: None,
            c0: 1.0,
            interval: IntervalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub setting: String,
    pub n: usize,
    pub params: String,
    pub method: Method,
    /// Percentage of trials rejecting (tests) or missing the target (intervals).
    pub rate: f64,
    pub half_width: f64,
    pub trials: usize,
    pub seed: u64,
    pub failures: usize,
    pub mean_width: Option<f64>,
    pub extrapolation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTable {
    pub rows: Vec<TableRow>,
    pub trials: usize,
    pub seed: u64,
}

impl SimulationTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record([
            "setting",
            "n",
            "params",
            "method",
            "rate",
            "half_width",
            "trials",
            "seed",
        ])
        .map_err(|e| invalid(e.to_string()))?;
        for r in &self.rows {
            wtr.write_record([
                r.setting.clone(),
                r.n.to_string(),
                r.params.clone(),
                r.method.name().to_string(),
                format!("{:?}", r.rate),
                format!("{:?}", r.half_width),
                r.trials.to_string(),
                r.seed.to_string(),
            ])
            .map_err(|e| invalid(e.to_string()))?;
        }
        let bytes = wtr.into_inner().map_err(|e| invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn row(&self, method: Method) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// `1.96 √(p̂(1−p̂)/trials)` in percentage points.
pub fn binomial_half_width(rate_pct: f64, trials: usize) -> f64 {
    let p = rate_pct / 100.0;
    100.0 * 1.96 * (p * (1.0 - p) / trials as f64).sqrt()
}

type Outcome = std::result::Result<(bool, Option<f64>), String>;

struct TrialContext<'a> {
    spec: &'a SettingSpec,
    methods: &'a [Method],
    opts: &'a HarnessOptions,
    generator: Generator,
    base_es: Option<Arc<EigenSystem>>,
    at_seed: u64,
}

impl TrialContext<'_> {
    fn run(&self, trial: u64) -> Vec<Outcome> {
        match self.run_inner(trial) {
            Ok(v) => v,
            Err(e) => vec![Err(e.to_string()); self.methods.len()],
        }
    }

    fn run_inner(&self, trial: u64) -> Result<Vec<Outcome>> {
        let mut rng = stream_rng(self.spec.seed, trial);
        let sim = self.generator.draw(self.spec.n, &mut rng)?;
        // fresh covariate and noise, drawn regardless of the methods requested
        let x0 = self.generator.draw_curves(1, &mut rng);
        let x0 = GridFunction::new(sim.data.grid(), x0.row(0).iter().copied().collect())?;
        let e0: f64 = rng.sample(StandardNormal);
        let data = &sim.data;
        let loss = self.spec.setting.loss();
        let level = 1.0 - self.opts.alpha;

        let fitted = match &self.base_es {
            Some(base) => {
                let es = if loss == Loss::Logistic {
                    Arc::new(base.rescaled(0.25 * plugin_kernel_scale(data)?)?)
                } else {
                    base.clone()
                };
                let om = design_matrix(data, &es)?;
                let gcv = gcv_on_design(
                    om.omega(),
                    data.responses(),
                    es.rho(),
                    &self.opts.lambda_grid,
                    loss,
                    false,
                );
                Some((es, gcv.map(|g| g.lambda())))
            }
            None => None,
        };
        let at_design = if self.methods.iter().any(|m| !m.needs_fit()) {
            Some(empirical_design(data, None, 1)?.1)
        } else {
            None
        };

        let mu0 = inner_product(&x0, &sim.beta0)?;
        let mut out = Vec::with_capacity(self.methods.len());
        for &m in self.methods {
            let res: Result<(bool, Option<f64>)> = (|| match m {
                Method::At | Method::AtGumbel => {
                    let cfg = AdaptiveConfig {
                        k_n: self.opts.k_n.unwrap_or_else(|| default_kn(self.spec.n)),
                        c0: self.opts.c0,
                        variant: Variant::Gauss,
                        calibration: if m == Method::At {
                            AtCalibration::MonteCarlo {
                                reps: self.opts.at_reps,
                                seed: self.at_seed,
                            }
                        } else {
                            AtCalibration::Gumbel
                        },
                    };
                    let om = at_design
                        .as_ref()
                        .expect("design built for adaptive methods");
                    let r = adaptive_test_design(data.responses(), om, &cfg, self.opts.alpha)?;
                    Ok((r.reject, None))
                }
                _ => {
                    let (es, lambda) = fitted.as_ref().expect("fit context built");
                    let lambda = match lambda {
                        Ok(l) => *l,
                        Err(e) => return Err(invalid(e.to_string())),
                    };
                    match m {
                        Method::Plrt => {
                            let opts = PlrtOptions {
                                loss,
                                with_intercept: false,
                                calibration: Calibration::Asymptotic,
                            };
                            let r = plrt(data, es, lambda, &NullValue::default(), &opts)?;
                            Ok((r.p_value <= self.opts.alpha, None))
                        }
                        Method::Ci => {
                            let f = fit(data, es, lambda, loss, false)?;
                            let ci = ci_conditional_mean(&f, &x0, level, &self.opts.interval)?;
                            Ok((!ci.contains(mu0), Some(ci.width())))
                        }
                        Method::Pi => {
                            let f = fit(data, es, lambda, loss, false)?;
                            let pi = prediction_interval(&f, &x0, level, 1.0, &self.opts.interval)?;
                            Ok((!pi.contains(mu0 + e0), Some(pi.width())))
                        }
                        Method::SlopeCi => {
                            let f = fit(data, es, lambda * self.opts.undersmooth, loss, false)?;
                            let ci = pointwise_ci_slope(&f, self.opts.slope_point, level)?;
                            let idx = data.grid().nearest_index(self.opts.slope_point);
                            Ok((!ci.contains(sim.beta0.values()[idx]), Some(ci.width())))
                        }
                        Method::Ct => {
                            let f = fit(data, es, lambda, loss, false)?;
                            let w = GridFunction::from_fn(data.grid(), |_| 1.0)?;
                            let c = inner_product(&w, &sim.beta0)?;
                            let r = contrast_test(&f, &w, c)?;
                            Ok((r.p_value <= self.opts.alpha, None))
                        }
                        Method::At | Method::AtGumbel => unreachable!(),
                    }
                }
            })();
            out.push(res.map_err(|e| e.to_string()));
        }
        Ok(out)
    }
}

/// Runs `trials` independent replications of `spec` and tabulates each method.
///
/// Trial `i` draws from stream `i` of the master seed, so the table does not
/// depend on the number of worker threads.
pub fn run_table(
    spec: &SettingSpec,
    methods: &[Method],
    trials: usize,
    threads: Option<usize>,
    opts: &HarnessOptions,
) -> Result<SimulationTable> {
    if trials < 100 {
        return Err(invalid(format!(
            "at least 100 trials are required, got {trials}"
        )));
    }
    if methods.is_empty() {
        return Err(invalid("no methods requested"));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(invalid(format!(
            "alpha must lie in (0, 1), got {}",
            opts.alpha
        )));
    }
    let loss = spec.setting.loss();
    if let Some(m) = methods
        .iter()
        .find(|m| loss == Loss::Logistic && m.gaussian_only())
    {
        return Err(invalid(format!(
            "method '{}' is not available for binary responses",
            m.name()
        )));
    }
    let generator = Generator::new(spec.setting, spec.t)?;
    let base_es = if methods.iter().any(|m| m.needs_fit()) {
        let np = spec.n.min(opts.max_penalized);
        Some(Arc::new(solve_bvp_analytic(2, np, generator.grid())?))
    } else {
        None
    };
    let ctx = TrialContext {
        spec,
        methods,
        opts,
        generator,
        base_es,
        at_seed: derive_seed(spec.seed, 0x6174),
    };
    let run = || -> Vec<Vec<Outcome>> {
        (0..trials as u64)
            .into_par_iter()
            .map(|t| ctx.run(t))
            .collect()
    };
    let results = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| invalid(e.to_string()))?
            .install(run),
        None => run(),
    };

    let mut rows = Vec::with_capacity(methods.len());
    for (j, &m) in methods.iter().enumerate() {
        let mut hits = 0usize;
        let mut ok = 0usize;
        let mut width_sum = 0.0;
        let mut widths = 0usize;
        let mut failures = 0usize;
        let mut first = None;
        for r in &results {
            match &r[j] {
                Ok((hit, w)) => {
                    ok += 1;
                    hits += usize::from(*hit);
                    if let Some(w) = w {
                        width_sum += w;
                        widths += 1;
                    }
                }
                Err(e) => {
                    failures += 1;
                    first.get_or_insert_with(|| e.clone());
                }
            }
        }
        if failures * 100 > trials {
            return Err(Error::TooManyFailures {
                failed: failures,
                trials,
                first: format!("{}: {}", m.name(), first.unwrap_or_default()),
            });
        }
        let rate = 100.0 * hits as f64 / ok as f64;
        rows.push(TableRow {
            setting: spec.setting.label(),
            n: spec.n,
            params: spec.setting.params(),
            method: m,
            rate,
            half_width: binomial_half_width(rate, ok),
            trials: ok,
            seed: spec.seed,
            failures,
            mean_width: (widths > 0).then(|| width_sum / widths as f64),
            extrapolation: spec.setting.is_extrapolation(),
        });
    }
    Ok(SimulationTable {
        rows,
        trials,
        seed: spec.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::integrate;

    #[test]
    fn zeta_values() {
        assert!((zeta_truncated(3.0) - 1.2020569031595942).abs() < 1e-13);
        assert!((zeta_truncated(2.0) - PI * PI / 6.0).abs() < 1e-12);
        // ζ(1.2)
        assert!((zeta_truncated(1.2) - 5.591582441177751).abs() < 1e-9);
    }

    #[test]
    fn zero_signal_is_pure_noise() {
        let s = gen_setting1(500, 0.0, 1.0, 3).unwrap();
        assert!(s.beta0.values().iter().all(|v| *v == 0.0));
        let y = s.data.responses();
        let m = y.iter().sum::<f64>() / 500.0;
        let v = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 499.0;
        assert!((v - 1.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn bump_symmetric_and_normalized() {
        let g = Generator::new(Setting::Two { b: 2.0, tau: 0.05 }, 1001).unwrap();
        let Slope::Fixed(beta) = &g.slope else {
            panic!()
        };
        let v = beta.values();
        for i in 0..v.len() {
            assert!((v[i] - v[v.len() - 1 - i]).abs() < 1e-12);
        }
        let sq = GridFunction::new(beta.grid(), v.iter().map(|x| x * x).collect()).unwrap();
        assert!((integrate(&sq) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn setting3_sparsity() {
        for seed in 0..20 {
            let g = Generator::new(
                Setting::Three {
                    model: Model3::TwoOne,
                    r2: 1.0,
                },
                201,
            )
            .unwrap();
            let mut rng = stream_rng(seed, 0);
            let beta = g.draw_slope(&mut rng).unwrap();
            // exactly one of φ_1 = 1, φ_2 = √2 cos(πt) with unit coefficient
            let v = beta.values();
            let constant = v.iter().all(|x| (x - v[0]).abs() < 1e-12);
            let cosine = (v[0] - SQRT_2).abs() < 1e-12 || (v[0] + SQRT_2).abs() < 1e-12;
            assert!(constant ^ cosine, "{seed}");
        }
    }

    #[test]
    fn truncated_scores_bounded() {
        let g = Generator::new(Setting::Four { alt: false }, 101).unwrap();
        let mut rng = stream_rng(1, 0);
        for _ in 0..1000 {
            assert!(g.draw_score(&mut rng).abs() <= 0.5);
        }
    }

    #[test]
    fn generators_deterministic() {
        let a = gen_setting3(20, Model3::NineTwo, 0.5, 9).unwrap();
        let b = gen_setting3(20, Model3::NineTwo, 0.5, 9).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.beta0, b.beta0);
    }

    #[test]
    fn half_width_formula() {
        assert!(
            (binomial_half_width(5.0, 100) - 100.0 * 1.96 * (0.05f64 * 0.95 / 100.0).sqrt()).abs()
                < 1e-12
        );
        assert_eq!(binomial_half_width(0.0, 100), 0.0);
    }

    #[test]
    fn rejects_bad_requests() {
        let spec = SettingSpec {
            setting: Setting::Four { alt: true },
            n: 50,
            t: 101,
            seed: 1,
        };
        let opts = HarnessOptions::default();
        assert!(run_table(&spec, &[Method::At], 100, Some(1), &opts).is_err());
        assert!(run_table(&spec, &[Method::Plrt], 99, Some(1), &opts).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
