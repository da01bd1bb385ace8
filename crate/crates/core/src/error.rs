use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("samples {first} and {second} coincide")]
    DuplicateSample { first: usize, second: usize },

    #[error("integration diverged at step {step}")]
    IntegrationDiverged { step: usize },

    #[error("point {point} has a degenerate bandwidth")]
    DegenerateBandwidth { point: usize },

    #[error(
        "bistochastic normalization did not converge after {iterations} iterations (row-sum deviation {residual:e})"
    )]
    NormalizationFailed { iterations: usize, residual: f64 },

    #[error("kernel is not ergodic: {0}")]
    Ergodicity(String),

    #[error("eigensolver failed: {0}")]
    Eigensolve(String),

    #[error("partition bin {bin} is empty")]
    DegeneratePartition { bin: usize },

    #[error("forecast trace {trace:e} is below the numerical floor")]
    ForecastDegenerate { trace: f64 },

    #[error("measurement in bin {bin} has zero probability under the current state")]
    ZeroProbability { bin: usize },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("state invariant violated: {0}")]
    Invariant(String),

    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("preset {preset}: {source}")]
    Preset {
        preset: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error("bundle hash mismatch: expected {expected}, found {found}")]
    BundleMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Attach the filter step at which an error surfaced.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Attach the name of the preset being run.
    pub fn in_preset(self, preset: &str) -> Self {
        Error::Preset {
            preset: preset.to_string(),
            source: Box::new(self),
        }
    }

    /// The error with any step or preset context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::Preset { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code: 2 for bad parameters or inputs, 3 for numerical
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Parameter(_)
            | Error::InsufficientData { .. }
            | Error::DuplicateSample { .. }
            | Error::Format(_)
            | Error::BundleMismatch { .. }
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}
