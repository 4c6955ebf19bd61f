use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the mapping pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate band {band}: p_min equals p_max")]
    DegenerateBand { band: usize },

    #[error("band {band} has no valid (non-nodata) values")]
    AllNodata { band: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("collapsed cluster {cluster}: no soft-assignment mass")]
    CollapsedCluster { cluster: usize },

    #[error("unlabeled cluster {cluster}")]
    UnlabeledCluster { cluster: usize },

    #[error("undefined CV: cluster mean has zero norm")]
    UndefinedCv,

    #[error("empty class {class}")]
    EmptyClass { class: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
