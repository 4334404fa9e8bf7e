use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty window [{lo}, {hi}]")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error("maximizer search diverged starting from {hint}")]
    MaximizerDiverged { hint: f64 },

    #[error("subdivision limit {limit} reached with error estimate {estimate:e} (target {target:e})")]
    SubdivisionLimit {
        limit: usize,
        estimate: f64,
        target: f64,
    },

    #[error("could not bracket the root of {what} (last bracket [{lo}, {hi}])")]
    BracketNotFound { what: &'static str, lo: f64, hi: f64 },

    #[error("strain {a} outside tabulated range [{lo}, {hi}]")]
    OutOfRange { a: f64, lo: f64, hi: f64 },

    #[error("relaxation tail error bound {bound:e} exceeds budget {budget:e}")]
    TailBudgetExceeded { bound: f64, budget: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no production samples left after burn-in")]
    NoSamples,

    #[error("dense oracle supports N <= 4, got N = {0}")]
    ChainTooLong(usize),

    #[error("slope fit needs at least 3 usable points, got {usable} of {total}")]
    InsufficientPoints { usable: usize, total: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::InvalidParameter { .. }
            | Error::EmptyWindow { .. }
            | Error::ChainTooLong(_) => 2,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
