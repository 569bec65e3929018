use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the normalization threshold")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch element {index}: {source}")]
    InBatch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("batch of {batch} keys exceeds queue capacity {capacity}")]
    BatchExceedsCapacity { batch: usize, capacity: usize },

    #[error("key norm {norm} deviates from 1")]
    NonUnitKey { norm: f64 },

    #[error("input norm {norm} deviates from 1")]
    NonUnitInput { norm: f64 },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("batch lengths differ: {left} vs {right}")]
    BatchLengthMismatch { left: usize, right: usize },

    #[error("invalid NLI label: {0}")]
    InvalidLabel(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: &'static str, reason: String },

    #[error("k = {k} exceeds corpus size {available}")]
    KTooLarge { k: usize, available: usize },

    #[error("margin denominator {0:e} too close to zero")]
    ZeroDenominator(f64),

    #[error("one side of the mining corpus is empty")]
    EmptySide,

    #[error("no gold pairs supplied")]
    NoGold,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad binary format: {0}")]
    Format(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn in_batch(index: usize, source: Error) -> Self {
        Error::InBatch {
            index,
            source: Box::new(source),
        }
    }

    /// Wraps an I/O error with the file it concerns.
    pub(crate) fn at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Innermost error, looking through batch-index wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InBatch { source, .. } => source.root(),
            other => other,
        }
    }
}
