//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by dataset ingestion, fitting, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed an invalid argument or configuration value.
    #[error("argument error: {0}")]
    Argument(String),

    /// A row of an input file could not be parsed.
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    /// Input file structure does not match the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Data is structurally valid but violates a dataset invariant.
    #[error("data error: {0}")]
    Data(String),

    /// A numerical operation failed or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
