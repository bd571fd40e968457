//! Error type shared across the crate.

/// Convenience alias used by every fallible function in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the pipeline.
///
/// Variants are grouped by failure class so callers (in particular the CLI)
/// can map them onto exit codes without string matching.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensors fed to an op do not have compatible shapes.
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A configuration value is invalid or inconsistent with the data.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API contract was violated (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A binary artifact (checkpoint) is malformed.
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    /// Synthetic data generation was asked for something impossible.
    #[error("generation error: {0}")]
    Generation(String),

    /// A numeric invariant failed at runtime (NaN/Inf in training).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Underlying I/O failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an I/O error with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
