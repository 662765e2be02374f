//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operation received incompatible shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operation argument is out of its valid range (stride < 1, bad axis, ...).
    #[error("invalid argument to {op}: {msg}")]
    InvalidArg { op: &'static str, msg: String },

    /// Configuration failed validation before any compute started.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset ingestion or file-format problem.
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint file is malformed or inconsistent with the config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Numeric failure during compute (NaN loss/gradient, failed gradient check).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for validation problems caught before
    /// compute, 2 for runtime/numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Data(_) | Error::Checkpoint(_) | Error::InvalidArg { .. } => 1,
            Error::ShapeMismatch { .. } | Error::Numeric(_) | Error::Io(_) => 2,
        }
    }
}
