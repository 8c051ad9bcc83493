//! Error classes shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by fusion, extraction, probing, scoring and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands whose dimensions or timing do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Values that violate a type invariant (non-finite numbers, bad ranges).
    #[error("validation error: {0}")]
    Validation(String),

    /// A named extractor or clip that is not present.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// Caller-supplied input that cannot be processed (too short, wrong length).
    #[error("input error: {0}")]
    Input(String),

    /// EMB1 header that is not recognised (magic, version, dtype, reserved bytes).
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// EMB1 payload whose size disagrees with its header.
    #[error("corruption error in {path}: expected {expected} bytes, found {actual}")]
    Corruption {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Suite, manifest or variant configuration that is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Metric requested on data for which it is not defined.
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    /// Embeddings referenced by a manifest that the store cannot provide.
    #[error("missing embeddings: {}", .0.join(", "))]
    MissingEmbeddings(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
