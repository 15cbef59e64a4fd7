use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("duplicate record for sensor {sensor} at {timestamp} (row {row})")]
    Conflict {
        sensor: String,
        timestamp: String,
        row: usize,
    },
    #[error("inconsistent time grid: {0}")]
    Grid(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("missing value for sensor {sensor} at {timestamp}")]
    IncompleteData { sensor: String, timestamp: String },
    #[error("window error: {0}")]
    Window(String),
    #[error("empty result: {0}")]
    Empty(String),
    #[error("unknown day {0}")]
    UnknownDay(usize),
    #[error("unknown sensor {0}")]
    UnknownSensor(String),
    #[error("solver did not converge after {iterations} iterations (primal {primal:.3e}, dual {dual:.3e})")]
    NonConvergence {
        iterations: usize,
        primal: f64,
        dual: f64,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("rank deficient regression: {0}")]
    RankDeficient(String),
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of a numerical routine (non-convergence, NaN, divergence,
    /// singular systems), as opposed to bad input data or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Numeric(_)
                | Error::Training { .. }
                | Error::RankDeficient(_)
        )
    }
}
