use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),

    #[error("cannot parse {value:?} as a finite number at row {row}, column `{column}`")]
    InvalidCell {
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("infeasible resample: {0}")]
    InfeasibleResample(String),

    #[error("optimisation failed: {message} (iterations {iterations}, gradient norm {gradient_norm:e})")]
    Optimisation {
        message: String,
        iterations: usize,
        gradient_norm: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical optimiser, as opposed to bad input.
    pub fn is_optimisation(&self) -> bool {
        matches!(self, Error::Optimisation { .. } | Error::NonFinite(_))
    }
}
