use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected length {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("sample set is empty")]
    EmptySamples,

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("invalid symmetry transform: {0}")]
    InvalidTransform(String),

    #[error("insufficient independent equivalents: needed {needed}, found {found}")]
    InsufficientIndependent { needed: usize, found: usize },

    #[error("degenerate plane: every difference from the origin is negligible")]
    DegeneratePlane,

    #[error("grid of {points_per_axis}^{dim} points exceeds the supported size of {limit}")]
    GridTooLarge {
        dim: usize,
        points_per_axis: usize,
        limit: usize,
    },

    #[error("loss must be non-negative, got {0}")]
    NegativeLoss(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}, line {line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}: artifact `{kind}` version {found} is not supported (expected {expected})")]
    ArtifactVersion {
        path: PathBuf,
        kind: String,
        expected: u32,
        found: u32,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors rooted in file system access.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
