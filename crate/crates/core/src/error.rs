//! Error taxonomy shared across the crate.
//!
//! Variants group by failure class rather than by module so the CLI can map
//! them onto stable exit codes: config/usage problems exit 1, bad input data
//! exits 2, runtime and numeric failures exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors or layers.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Index outside the valid range of a table, window, or sensor list.
    #[error("index out of range: {0}")]
    Index(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed text input; `line` is 1-based within the offending file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Semantically invalid data (wrong labels, all-missing sensor, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Training diverged or produced non-finite values.
    #[error("training error: {0}")]
    Training(String),

    /// Checkpoint could not be read back or does not match the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Bad CLI flags or config file contents.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 runtime/numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Parse { .. } | Error::Data(_) | Error::Io(_) => 2,
            Error::Dimension(_)
            | Error::Index(_)
            | Error::Contract(_)
            | Error::Training(_)
            | Error::Checkpoint(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
