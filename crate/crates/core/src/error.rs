use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid network instance: {0}")]
    Instance(String),

    #[error("degenerate direct channel for user {user}: {reason}")]
    Degenerate { user: usize, reason: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("no usable dimension to allocate power on")]
    NoUsableDimension,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("regularization {tau} is below the admissible minimum {tau_min}")]
    TauTooSmall { tau: f64, tau_min: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
