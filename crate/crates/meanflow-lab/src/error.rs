//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape-incompatible operands, named after the offending primitive.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// NaN or infinity detected by an explicit finiteness check.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// `backward` was asked to differentiate a non-scalar node.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// A training step or sampler produced NaN/Inf and was aborted.
    #[error("numeric failure: {context}")]
    Numeric { context: String },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Violation of the t >= r time convention.
    #[error("time pair violates t >= r: t={t}, r={r}")]
    TimeOrder { t: f64, r: f64 },

    /// Checkpoint or network used in the wrong conditioning mode.
    #[error("mode mismatch: expected {expected}, found {found}")]
    ModeMismatch { expected: String, found: String },

    #[error("unknown condition id: {0}")]
    UnknownCondition(String),

    #[error("unknown recipe {name:?}; available recipes: {available}")]
    UnknownRecipe { name: String, available: String },

    /// Artifacts produced under different configs were combined.
    #[error("config digest mismatch ({context}): {left} vs {right}; pass --force-digest to override")]
    DigestMismatch {
        left: String,
        right: String,
        context: String,
    },

    /// Records lacking the vision embedding required by a metric.
    #[error("missing vision embeddings for records: {ids:?}")]
    MissingVision { ids: Vec<String> },

    /// Malformed on-disk artifact.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code contract: 1 validation, 2 numeric failure.
    /// (Exit code 3, acceptance-threshold failure, is produced by `repro`
    /// itself, not by an `Error`.)
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::Numeric { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
