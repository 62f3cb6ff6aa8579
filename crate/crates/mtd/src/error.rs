use thiserror::Error;

/// Errors raised by constructors and operations with explicit error contracts.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("context too short: need at least {needed} tokens, got {got}")]
    ContextTooShort { needed: usize, got: usize },

    #[error(
        "enumeration too large: m^(T-m) = {paths:.3e} latent paths exceeds the bound {bound:.1e}"
    )]
    EnumerationTooLarge { paths: f64, bound: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
