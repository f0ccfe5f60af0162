use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimensionMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("window rows {rows:?} cols {cols:?} out of bounds for {shape_rows}x{shape_cols} matrix")]
    WindowOutOfBounds {
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
        shape_rows: usize,
        shape_cols: usize,
    },

    #[error("observation matrix has zero Frobenius norm; relative error undefined")]
    ZeroNorm,

    #[error("non-finite value detected in factor {factor} at iteration {iteration}")]
    Divergence {
        factor: &'static str,
        iteration: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible plan: {0}")]
    Infeasible(String),

    #[error("communicator: {0}")]
    Comm(String),

    #[error("communicator timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("communicator group is poisoned: {0}")]
    Poisoned(String),

    #[error("store: {0}")]
    Store(String),

    #[error("store budget: {0}")]
    Budget(String),

    #[error("file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mismatch(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            op,
            left: format!("{}x{}", left.0, left.1),
            right: format!("{}x{}", right.0, right.1),
        }
    }

    /// Short machine-readable kind, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidMatrix(_) => "invalid_matrix",
            Error::NegativeEntry { .. } => "negative_entry",
            Error::WindowOutOfBounds { .. } => "window_out_of_bounds",
            Error::ZeroNorm => "zero_norm",
            Error::Divergence { .. } => "divergence",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Infeasible(_) => "infeasible",
            Error::Comm(_) => "comm",
            Error::Timeout(_) => "timeout",
            Error::Poisoned(_) => "poisoned",
            Error::Store(_) => "store",
            Error::Budget(_) => "budget",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
