use thiserror::Error;

/// Errors raised by field, geometry, integration and grid operations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("conformal factor is singular at s={s}: |shell - U| = {gap:.3e} <= {threshold:.3e}")]
    SingularConformalFactor { s: f64, gap: f64, threshold: f64 },

    #[error("metric is not invertible at the requested point")]
    SingularMetric,

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integrator step failure at s={s}: {reason}")]
    StepFailure { s: f64, reason: String },

    #[error("singularity reached at s={s}: {source}")]
    SingularityReached {
        s: f64,
        state: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("too few samples: need at least {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },

    #[error("grid too small: axis {axis} has {points} points, need at least {needed}")]
    GridTooSmall {
        axis: usize,
        points: usize,
        needed: usize,
    },

    #[error("non-uniform sampling along tau (max spacing deviation {deviation:.3e})")]
    NonUniformSampling { deviation: f64 },

    #[error("tau integral does not converge on the window: tail/peak = {ratio:.3e}")]
    NonConvergentTail { ratio: f64 },

    #[error("gauge function violates the 5D wave equation: residual {residual:.3e} > {threshold:.3e}")]
    NotAGaugeFunction { residual: f64, threshold: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
