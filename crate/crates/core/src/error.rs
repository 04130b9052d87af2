use std::path::PathBuf;

/// Errors raised by the selection, testing and benchmarking routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}, column {col}: cannot parse {cell:?} as a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        col: usize,
        cell: String,
    },
    #[error("{path}: file contains no data rows")]
    EmptyFile { path: PathBuf },
    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("dimension mismatch: {context} (expected {expected}, found {found})")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("eigensolver failed to converge in {0}")]
    EigenFailure(&'static str),
    #[error("degenerate bandwidth: all cross-group distances are zero")]
    DegenerateBandwidth,
    #[error("problem dimension {dim} exceeds the exact-search cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("index set is empty")]
    EmptySet,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
