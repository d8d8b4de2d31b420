use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the estimation and inference routines.
///
/// Variants fall into two families that callers (the CLI in particular)
/// triage differently: problems with the supplied data or arguments, and
/// numerical failures inside an otherwise valid computation. See
/// [`Error::is_data_error`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: {left} points vs {right} points")]
    GridMismatch { left: usize, right: usize },

    #[error("grid with {points} points cannot resolve a derivative of order {order} (need at least {required})")]
    Resolution {
        points: usize,
        order: usize,
        required: usize,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("responses must be 0/1 for the logistic loss (found {value} at row {row})")]
    NonBinary { row: usize, value: f64 },

    #[error("requested {requested} eigenfunctions but the numerical rank is {rank}")]
    Rank { requested: usize, rank: usize },

    #[error("root finder failed to bracket eigenvalue {nu} near seed {seed:.6e}")]
    Bracket { nu: usize, seed: f64 },

    #[error("numerically degenerate eigenvalue {nu}: null space dimension {dim}")]
    Degenerate { nu: usize, dim: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("Newton iterations failed to converge after {iterations} steps (gradient max-norm {gradient:.3e}, objective {objective:.6e})")]
    Convergence {
        iterations: usize,
        gradient: f64,
        objective: f64,
    },

    #[error("degenerate contrast: all projections of the weight function vanish")]
    DegenerateContrast,

    #[error("degenerate statistic: {0}")]
    DegenerateStatistic(String),

    #[error("series truncated too early: tail estimate {tail:.3e} exceeds {limit:.1e} of the sum {sum:.6e}")]
    Truncation { tail: f64, sum: f64, limit: f64 },

    #[error("design is not orthonormal: max deviation of (1/n)Ω'Ω from I is {deviation:.3e}")]
    Design { deviation: f64 },

    #[error("polynomial null space of degree {degree} is too ill-conditioned (max degree 8)")]
    Conditioning { degree: usize },

    #[error("all GCV scores are non-finite")]
    GcvFailed,

    #[error("{failed} of {trials} trials failed (limit 1%); first failure: {first}")]
    TooManyFailures {
        failed: usize,
        trials: usize,
        first: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// `true` for errors caused by malformed or inconsistent inputs,
    /// `false` for numerical failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::GridMismatch { .. }
                | Error::Resolution { .. }
                | Error::EmptyDataset
                | Error::NonBinary { .. }
                | Error::Io(_)
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
