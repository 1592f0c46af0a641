//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HabiError {
    /// Structural misconfiguration: bad shapes, unknown keys, invalid ranges.
    #[error("configuration error: {0}")]
    Config(String),
    /// API misuse: missing prerequisite artifacts, empty inputs, bad call order.
    #[error("usage error: {0}")]
    Usage(String),
    /// A training step produced a non-finite quantity.
    #[error("training error in {module}: {message}")]
    Training { module: String, message: String },
    /// Checkpoint or dataset container could not be read or written.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    /// Degenerate numerics outside of training (e.g. zero-everywhere likelihood).
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HabiError>;

impl HabiError {
    pub fn training(module: &str, message: impl Into<String>) -> Self {
        HabiError::Training { module: module.to_string(), message: message.into() }
    }

    /// Process exit code for the CLI: 1 for usage/config problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HabiError::Usage(_) | HabiError::Config(_) => 1,
            _ => 2,
        }
    }
}
