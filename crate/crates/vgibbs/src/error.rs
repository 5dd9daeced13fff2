//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation precondition (bad shape, bad index, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The data itself is unusable (empty column, unobserved dimension, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A numeric routine failed (non-PD matrix, non-finite values, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file could not be parsed; `row` is the 1-based data row.
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    /// Bad CLI flags or experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code per the CLI contract: 1 for config/usage
    /// problems, 2 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
