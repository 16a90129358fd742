use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} failed after jitter escalation)")]
    NotPositiveDefinite { pivot: usize },

    #[error("rank-one downdate would break positive definiteness")]
    DowndateFailure,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("argument outside the function domain: {0}")]
    DomainError(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("predictive variance {0} is negative beyond round-off")]
    NegativeVariance(f64),

    #[error("target log density is not finite")]
    NonFiniteTarget,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("density grids need two observed dimensions, got {0}")]
    UnsupportedDimension(usize),

    #[error("invalid dataset size: {0}")]
    InvalidSize(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid fold count {k} for {n} points")]
    InvalidFoldCount { n: usize, k: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("no posterior samples")]
    EmptyChain,

    #[error("all training points coincide")]
    DegenerateData,

    #[error("chain failed at iteration {iteration}: {source}")]
    ChainFailure {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}
