use thiserror::Error;

/// Errors produced by the estimation and certification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid eps: {0}")]
    InvalidEps(String),
    #[error("dual ball has {count} vertices, above the cap of {cap}")]
    TooManyVertices { count: f64, cap: usize },
    #[error("{count} subsets to enumerate, above the cap of {cap}")]
    TooManySubsets { count: f64, cap: usize },
    #[error("cap {cap} is infeasible for length {len} (need cap * len >= 1)")]
    InfeasibleCap { cap: f64, len: usize },
    #[error("profile grid does not cover [{lo}, {hi}]")]
    GridCoverage { lo: f64, hi: f64 },
    #[error("no resilient subset found")]
    NoResilientSubset,
    #[error("all scores are zero on the active set")]
    NoProgress,
    #[error("promise violated: {0}")]
    PromiseViolated(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
