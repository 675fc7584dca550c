use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file at byte {offset}: {reason}")]
    MalformedFile { offset: u64, reason: String },

    #[error("non-finite value in record {record} (component {component})")]
    NonFiniteValue { record: usize, component: usize },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("k = {k} exceeds the number of points ({points})")]
    KTooLarge { k: usize, points: usize },

    #[error("no k <= {k_max} excludes every negative (best k = {best_k}, {residual} negatives remain)")]
    NotFound {
        k_max: usize,
        best_k: usize,
        residual: usize,
    },

    #[error("invalid parameters: {0}")]
    BadSpec(String),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },

    #[error("rejection sampling exhausted: {accepted} accepted out of {draws} draws")]
    RejectionExhausted { accepted: usize, draws: usize },

    #[error("attack start point lies outside its constraint")]
    ConstraintViolation,

    #[error("point is not classified as the target class (margin {margin})")]
    MisclassifiedPoint { margin: f64 },

    #[error("{key}: {message}")]
    Config { key: String, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(offset: u64, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            offset,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
