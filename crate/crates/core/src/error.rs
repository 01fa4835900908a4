use thiserror::Error;

/// Errors surfaced by alignment, training and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward pass requires a scalar root, got shape {0}")]
    NonScalarRoot(String),

    #[error("matrix is singular or near-singular: {0}")]
    Singular(String),

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: String, iterations: usize },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: i64, supported: i64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
