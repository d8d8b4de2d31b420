//! Argument parsing, configuration merging and subcommand dispatch for `gflm`.

use clap::{Args, Parser, Subcommand, ValueEnum};
use gflm::adaptive::{adaptive_test, default_kn, AdaptiveConfig, AtCalibration, Variant};
use gflm::eigensys::{empirical_eigensystem, plugin_kernel_scale, solve_bvp_analytic, EigenSystem};
use gflm::fit::{default_lambda_grid, fit, gcv_select, GcvTrace, Loss, PenalizedFit};
use gflm::funcspace::{CurveDataset, GridFunction};
use gflm::infer::{
    ci_conditional_mean, contrast_test, plrt, plrt_composite, pointwise_ci_slope,
    prediction_interval, Calibration, IntervalOptions, NullValue, PlrtOptions, DEFAULT_MC_REPS,
};
use gflm::io;
use gflm::sim::{run_table, HarnessOptions, Method, Model3, Setting, SettingSpec, DEFAULT_TRIALS};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gflm::Error> for CliError {
    fn from(e: gflm::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn parse_loss(s: &str) -> Result<Loss, String> {
    s.parse::<Loss>().map_err(|e| e.to_string())
}

fn parse_level(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} is not positive"))
    }
}

#[derive(Parser, Debug, Clone, Serialize)]
#[command(
    name = "gflm",
    version,
    about = "Functional linear models under roughness regularization"
)]
pub struct RunConfig {
    /// Master seed for Monte Carlo calibration and simulation.
    #[arg(long, env = "GFLM_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "GFLM_THREADS", global = true)]
    pub threads: Option<usize>,
    /// key=value file whose entries apply unless overridden by flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// JSON report path; a `.csv` path receives the CSV artifact and the
    /// report goes to the same stem with `.json`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Analytic,
    Empirical,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    #[arg(long)]
    pub curves: PathBuf,
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long, default_value = "l2", value_parser = parse_loss)]
    pub loss: Loss,
    /// Penalty derivative order.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long)]
    pub intercept: bool,
    #[arg(long, value_enum, default_value = "analytic")]
    pub basis: Basis,
    /// Number of basis functions (analytic: penalized ones; default min(n, 50)).
    #[arg(long)]
    pub n_basis: Option<usize>,
    #[arg(long, value_parser = parse_positive, conflicts_with = "gcv")]
    pub lambda: Option<f64>,
    /// Select λ by generalized cross validation (the default without --lambda).
    #[arg(long)]
    pub gcv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlrtCalibration {
    Asymptotic,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AtCalibrationArg {
    Gumbel,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Gauss,
    Subgauss,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Eigenvalues and eigenfunctions of the simultaneous diagonalization.
    Eigensys {
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Number of eigenfunctions, null space included.
        #[arg(long = "n", default_value_t = 10)]
        count: usize,
        /// Grid size for the analytic system.
        #[arg(long, default_value_t = 1000)]
        t: usize,
        /// Use the empirical system of these curves instead.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Penalized fit.
    Fit {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Confidence interval for the conditional mean at a curve, or for the slope at a point.
    Ci {
        #[command(flatten)]
        data: DataArgs,
        /// CSV holding the new curve in the curves format.
        #[arg(
            long,
            required_unless_present = "slope_at",
            conflicts_with = "slope_at"
        )]
        x0: Option<PathBuf>,
        #[arg(long)]
        slope_at: Option<f64>,
        #[arg(long, default_value_t = 0.95, value_parser = parse_level)]
        level: f64,
    },
    /// Prediction interval for a new response.
    PredictInterval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        x0: PathBuf,
        #[arg(long, default_value_t = 0.95, value_parser = parse_level)]
        level: f64,
        /// Noise variance; defaults to the residual mean square.
        #[arg(long, value_parser = parse_positive)]
        noise_var: Option<f64>,
    },
    /// Test of a functional contrast ∫wβ = c.
    Contrast {
        #[command(flatten)]
        data: DataArgs,
        /// Weight function in the curves format; defaults to w ≡ 1.
        #[arg(long)]
        w: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        c: f64,
    },
    /// Penalized likelihood ratio test of β = 0, or of a polynomial null.
    Plrt {
        #[command(flatten)]
        data: DataArgs,
        /// Degree of the polynomial null.
        #[arg(long)]
        composite: Option<usize>,
        #[arg(long, value_enum, default_value = "asymptotic")]
        calibration: PlrtCalibration,
        #[arg(long, default_value_t = DEFAULT_MC_REPS)]
        mc_reps: usize,
    },
    /// Adaptive max-test over smoothness levels.
    Adaptive {
        #[arg(long)]
        curves: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, value_enum, default_value = "gauss")]
        variant: VariantArg,
        #[arg(long)]
        kn: Option<usize>,
        #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
        c0: f64,
        #[arg(long, value_enum, default_value = "mc")]
        calibration: AtCalibrationArg,
        #[arg(long, default_value_t = DEFAULT_MC_REPS)]
        mc_reps: usize,
        #[arg(long, default_value_t = 0.05, value_parser = parse_level)]
        alpha: f64,
    },
    /// Monte Carlo size, power and coverage tables.
    Simulate {
        /// 1, 2, 3-(2,1), 3-(9,2) or 4.
        #[arg(long)]
        setting: String,
        #[arg(long)]
        n: usize,
        #[arg(long = "B")]
        b: Option<f64>,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        r2: Option<f64>,
        /// Alternative slope in setting 4.
        #[arg(long)]
        alt: bool,
        /// Comma-separated subset of plrt, at, at-gumbel, ci, pi, slope-ci, ct.
        #[arg(long, default_value = "plrt,at")]
        methods: String,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = gflm::sim::DEFAULT_T)]
        t: usize,
        #[arg(long, default_value_t = 0.05, value_parser = parse_level)]
        alpha: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Eigensys { .. } => "eigensys",
            Command::Fit { .. } => "fit",
            Command::Ci { .. } => "ci",
            Command::PredictInterval { .. } => "predict-interval",
            Command::Contrast { .. } => "contrast",
            Command::Plrt { .. } => "plrt",
            Command::Adaptive { .. } => "adaptive",
            Command::Simulate { .. } => "simulate",
        }
    }
}

const SUBCOMMANDS: [&str; 8] = [
    "eigensys",
    "fit",
    "ci",
    "predict-interval",
    "contrast",
    "plrt",
    "adaptive",
    "simulate",
];

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().map(|a| a.to_string_lossy().into_owned());
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_file(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
        let k = k.trim().trim_start_matches("--").replace('_', "-");
        if k.is_empty() || k == "config" {
            return Err(CliError::Usage(format!(
                "config line {}: invalid key",
                i + 1
            )));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

fn user_sets(argv: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    let eq = format!("--{key}=");
    argv.iter().any(|a| *a == flag || a.starts_with(&eq))
}

/// Inserts config-file entries right after the subcommand, skipping keys the
/// user gave on the command line (or through the environment).
fn merge_config(argv: Vec<OsString>, entries: &[(String, String)]) -> Vec<OsString> {
    let strs: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let Some(pos) = strs
        .iter()
        .skip(1)
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
    else {
        return argv;
    };
    let pos = pos + 1;
    let mut extra: Vec<OsString> = Vec::new();
    for (k, v) in entries {
        let overridden = user_sets(&strs, k)
            || (k == "lambda" && user_sets(&strs, "gcv"))
            || (k == "gcv" && user_sets(&strs, "lambda"))
            || (k == "seed" && std::env::var_os("GFLM_SEED").is_some())
            || (k == "threads" && std::env::var_os("GFLM_THREADS").is_some());
        if overridden {
            continue;
        }
        match v.as_str() {
            "true" => extra.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                extra.push(format!("--{k}").into());
                extra.push(v.into());
            }
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, extra);
    out
}

/// Parses the command line, merging a `--config` file under the flags.
///
/// Help and version requests come back as `Err` carrying the clap error so the
/// caller can print them with exit status 0.
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, ParseFailure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config_path(&argv) {
        Some(p) => {
            let text = fs::read_to_string(&p)
                .map_err(|e| ParseFailure::Cli(CliError::Usage(format!("{}: {e}", p.display()))))?;
            let entries = parse_config_file(&text).map_err(ParseFailure::Cli)?;
            merge_config(argv, &entries)
        }
        None => argv,
    };
    let cfg = RunConfig::try_parse_from(argv).map_err(ParseFailure::Clap)?;
    validate(&cfg).map_err(ParseFailure::Cli)?;
    Ok(cfg)
}

#[derive(Debug)]
pub enum ParseFailure {
    Clap(clap::Error),
    Cli(CliError),
}

impl ParseFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            ParseFailure::Clap(e) if !e.use_stderr() => EXIT_OK,
            ParseFailure::Clap(_) => EXIT_USAGE,
            ParseFailure::Cli(e) => e.exit_code(),
        }
    }
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseFailure::Clap(e) => write!(f, "{e}"),
            ParseFailure::Cli(e) => write!(f, "{e}"),
        }
    }
}

fn validate(cfg: &RunConfig) -> CliResult<()> {
    if cfg.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    if let Command::Simulate { .. } = &cfg.command {
        simulate_spec(cfg)?;
    }
    Ok(())
}

fn setting_from(
    setting: &str,
    b: Option<f64>,
    xi: Option<f64>,
    tau: Option<f64>,
    r2: Option<f64>,
    alt: bool,
) -> CliResult<Setting> {
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| CliError::Usage(format!("setting {setting} needs --{name}")))
    };
    let s = match setting {
        "1" => Setting::One {
            b: need(b, "B")?,
            xi: need(xi, "xi")?,
        },
        "2" => Setting::Two {
            b: need(b, "B")?,
            tau: need(tau, "tau")?,
        },
        "3-(2,1)" | "3-21" => Setting::Three {
            model: Model3::TwoOne,
            r2: need(r2, "r2")?,
        },
        "3-(9,2)" | "3-92" => Setting::Three {
            model: Model3::NineTwo,
            r2: need(r2, "r2")?,
        },
        "4" => Setting::Four { alt },
        other => return Err(CliError::Usage(format!("unknown setting '{other}'"))),
    };
    Ok(s)
}

/// Simulation specification encoded by a `simulate` config.
pub fn simulate_spec(cfg: &RunConfig) -> CliResult<(SettingSpec, Vec<Method>)> {
    let Command::Simulate {
        setting,
        n,
        b,
        xi,
        tau,
        r2,
        alt,
        methods,
        trials,
        t,
        ..
    } = &cfg.command
    else {
        return Err(CliError::Usage("not a simulate command".into()));
    };
    let s = setting_from(setting, *b, *xi, *tau, *r2, *alt)?;
    if *trials < 100 {
        return Err(CliError::Usage(format!(
            "--trials must be at least 100, got {trials}"
        )));
    }
    let methods = methods
        .split(',')
        .map(|m| {
            m.trim()
                .parse::<Method>()
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((
        SettingSpec {
            setting: s,
            n: *n,
            t: *t,
            seed: cfg.seed,
        },
        methods,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
}

/// SHA-256 of the configuration with output paths and thread count removed.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Value::Object(map) = &mut v {
        map.remove("out");
        map.remove("threads");
        map.remove("config");
    }
    let digest = Sha256::digest(v.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_hash: config_hash(cfg),
    }
}

/// Artifacts produced by a subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub report: Value,
    pub csv: Option<String>,
}

fn with_provenance(report: impl Serialize, cfg: &RunConfig) -> Value {
    let mut v = serde_json::to_value(report).expect("report serializes");
    let p = serde_json::to_value(provenance(cfg)).expect("provenance serializes");
    match &mut v {
        Value::Object(map) => {
            map.insert("provenance".into(), p);
            v
        }
        other => json!({ "result": other.clone(), "provenance": p }),
    }
}

fn load(data: &DataArgs) -> CliResult<CurveDataset> {
    Ok(io::read_dataset(&data.curves, &data.responses)?)
}

fn load_curve(path: &Path, data: &CurveDataset) -> CliResult<GridFunction> {
    let (grid, x) = io::read_curves(path)?;
    data.grid().ensure_same(&grid)?;
    if x.nrows() != 1 {
        return Err(CliError::Data(format!(
            "{}: expected one curve, found {}",
            path.display(),
            x.nrows()
        )));
    }
    Ok(GridFunction::new(grid, x.row(0).iter().copied().collect())?)
}

fn basis(data: &CurveDataset, args: &DataArgs) -> CliResult<Arc<EigenSystem>> {
    let es = match args.basis {
        Basis::Analytic => {
            let np = args.n_basis.unwrap_or_else(|| data.n().min(50));
            let es = solve_bvp_analytic(args.m, np, data.grid())?;
            if args.loss == Loss::Logistic {
                // Bernoulli variance 1/4 at the null when no weights are given
                let c = match data.weights() {
                    Some(_) => plugin_kernel_scale(data)?,
                    None => 0.25 * plugin_kernel_scale(data)?,
                };
                es.rescaled(c)?
            } else {
                es
            }
        }
        Basis::Empirical => empirical_eigensystem(data, args.n_basis, args.m + 1)?,
    };
    Ok(Arc::new(es))
}

struct Fitted {
    fit: PenalizedFit,
    trace: Option<GcvTrace>,
}

fn select_lambda(
    data: &CurveDataset,
    es: &EigenSystem,
    args: &DataArgs,
) -> CliResult<(f64, Option<GcvTrace>)> {
    match args.lambda {
        Some(l) => Ok((l, None)),
        None => {
            let tr = gcv_select(data, es, &default_lambda_grid(), args.loss, args.intercept)?;
            Ok((tr.lambda(), Some(tr)))
        }
    }
}

fn fitted(data: &CurveDataset, es: &Arc<EigenSystem>, args: &DataArgs) -> CliResult<Fitted> {
    let (lambda, trace) = select_lambda(data, es, args)?;
    let f = fit(data, es, lambda, args.loss, args.intercept)?;
    Ok(Fitted { fit: f, trace })
}

fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> gflm::Result<()>) -> CliResult<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Runs a parsed configuration and returns its artifacts without writing them.
pub fn execute(cfg: &RunConfig) -> CliResult<Output> {
    let mut csv = None;
    let report = match &cfg.command {
        Command::Eigensys {
            m,
            count,
            t,
            curves,
        } => {
            if *count == 0 {
                return Err(CliError::Usage("--n must be at least 1".into()));
            }
            let es = match curves {
                Some(p) => {
                    let (grid, x) = io::read_curves(p)?;
                    let n = x.nrows();
                    let data = CurveDataset::new(grid, x, vec![0.0; n], None)?;
                    empirical_eigensystem(&data, Some(*count), m + 1)?
                }
                None => {
                    let grid = gflm::funcspace::Grid::uniform(*t)?;
                    solve_bvp_analytic(*m, *count, grid)?.truncated(*count)?
                }
            };
            csv = Some(csv_string(|b| io::write_eigenfunctions_to(b, &es))?);
            json!({
                "m": es.m(),
                "k": es.k(),
                "source": es.provenance(),
                "null_dim": es.null_dim(),
                "kernel_scale": es.kernel_scale(),
                "eigenvalues": es.rho(),
            })
        }
        Command::Fit { data } => {
            let d = load(data)?;
            let es = basis(&d, data)?;
            let f = fitted(&d, &es, data)?;
            csv = Some(csv_string(|b| io::write_function_to(b, &f.fit.beta()))?);
            json!({
                "alpha": f.fit.alpha,
                "lambda": f.fit.lambda,
                "h": f.fit.h,
                "loss": f.fit.loss,
                "intercept": f.fit.with_intercept,
                "coefficients": f.fit.b,
                "iterations": f.fit.iterations,
                "gcv_trace": f.trace,
            })
        }
        Command::Ci {
            data,
            x0,
            slope_at,
            level,
        } => {
            let d = load(data)?;
            let es = basis(&d, data)?;
            let f = fitted(&d, &es, data)?;
            let r = match (x0, slope_at) {
                (Some(p), _) => {
                    let x = load_curve(p, &d)?;
                    ci_conditional_mean(&f.fit, &x, *level, &IntervalOptions::default())?
                }
                (None, Some(z)) => pointwise_ci_slope(&f.fit, *z, *level)?,
                (None, None) => return Err(CliError::Usage("ci needs --x0 or --slope-at".into())),
            };
            let mut v = serde_json::to_value(r).expect("report serializes");
            v["lambda"] = json!(f.fit.lambda);
            v
        }
        Command::PredictInterval {
            data,
            x0,
            level,
            noise_var,
        } => {
            let d = load(data)?;
            let es = basis(&d, data)?;
            let f = fitted(&d, &es, data)?;
            let x = load_curve(x0, &d)?;
            let s2 = match noise_var {
                Some(v) => *v,
                None => residual_mean_square(&f.fit, &d)?,
            };
            let r = prediction_interval(&f.fit, &x, *level, s2, &IntervalOptions::default())?;
            let mut v = serde_json::to_value(r).expect("report serializes");
            v["lambda"] = json!(f.fit.lambda);
            v["noise_var"] = json!(s2);
            v
        }
        Command::Contrast { data, w, c } => {
            let d = load(data)?;
            let es = basis(&d, data)?;
            let f = fitted(&d, &es, data)?;
            let w = match w {
                Some(p) => load_curve(p, &d)?,
                None => GridFunction::from_fn(d.grid(), |_| 1.0)?,
            };
            serde_json::to_value(contrast_test(&f.fit, &w, *c)?).expect("report serializes")
        }
        Command::Plrt {
            data,
            composite,
            calibration,
            mc_reps,
        } => {
            let d = load(data)?;
            let es = basis(&d, data)?;
            let (lambda, _) = select_lambda(&d, &es, data)?;
            let opts = PlrtOptions {
                loss: data.loss,
                with_intercept: data.intercept,
                calibration: match calibration {
                    PlrtCalibration::Asymptotic => Calibration::Asymptotic,
                    PlrtCalibration::Mc => Calibration::MonteCarlo {
                        reps: *mc_reps,
                        seed: cfg.seed,
                    },
                },
            };
            let r = match composite {
                Some(j) => plrt_composite(&d, &es, lambda, *j, &opts)?,
                None => plrt(&d, &es, lambda, &NullValue::default(), &opts)?,
            };
            serde_json::to_value(r).expect("report serializes")
        }
        Command::Adaptive {
            curves,
            responses,
            variant,
            kn,
            c0,
            calibration,
            mc_reps,
            alpha,
        } => {
            let d = io::read_dataset(curves, responses)?;
            let config = AdaptiveConfig {
                k_n: kn.unwrap_or_else(|| default_kn(d.n())),
                c0: *c0,
                variant: match variant {
                    VariantArg::Gauss => Variant::Gauss,
                    VariantArg::Subgauss => Variant::Subgauss,
                },
                calibration: match calibration {
                    AtCalibrationArg::Gumbel => AtCalibration::Gumbel,
                    AtCalibrationArg::Mc => AtCalibration::MonteCarlo {
                        reps: *mc_reps,
                        seed: cfg.seed,
                    },
                },
            };
            serde_json::to_value(adaptive_test(&d, &config, *alpha)?).expect("report serializes")
        }
        Command::Simulate { alpha, .. } => {
            let (spec, methods) = simulate_spec(cfg)?;
            let opts = HarnessOptions {
                alpha: *alpha,
                ..HarnessOptions::default()
            };
            let table = run_table(&spec, &methods, spec_trials(cfg), cfg.threads, &opts)?;
            csv = Some(table.to_csv()?);
            json!({ "spec": spec, "table": table })
        }
    };
    Ok(Output {
        report: with_provenance(report, cfg),
        csv,
    })
}

fn spec_trials(cfg: &RunConfig) -> usize {
    match &cfg.command {
        Command::Simulate { trials, .. } => *trials,
        _ => 0,
    }
}

fn residual_mean_square(f: &PenalizedFit, d: &CurveDataset) -> CliResult<f64> {
    let mut rss = 0.0;
    for (i, y) in d.responses().iter().enumerate() {
        let r = y - f.linear_predictor(&d.curve(i))?;
        rss += r * r;
    }
    Ok(rss / d.n() as f64)
}

fn write_outputs(cfg: &RunConfig, out: &Output) -> CliResult<()> {
    let report = serde_json::to_string_pretty(&out.report).expect("report serializes") + "\n";
    match &cfg.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => {
            if let Some(csv) = &out.csv {
                fs::write(p, csv)?;
            }
            fs::write(p.with_extension("json"), report)?;
        }
        Some(p) => fs::write(p, report)?,
        None => print!("{report}"),
    }
    Ok(())
}

/// Executes `cfg`, writes its artifacts and returns the exit status.
pub fn run(cfg: &RunConfig) -> i32 {
    let start = Instant::now();
    let result = match cfg.threads {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| execute(cfg)),
            Err(e) => Err(CliError::Numerical(e.to_string())),
        },
        None => execute(cfg),
    }
    .and_then(|out| write_outputs(cfg, &out));
    match result {
        Ok(()) => {
            eprintln!(
                "gflm {}: done in {:.3}s",
                cfg.command.name(),
                start.elapsed().as_secs_f64()
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("gflm {}: {e}", cfg.command.name());
            e.exit_code()
        }
    }
}
