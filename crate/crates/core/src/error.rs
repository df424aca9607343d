use thiserror::Error;

/// Errors raised by the bound and certificate engine.
#[derive(Debug, Error)]
pub enum CertError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported norm: {0}")]
    UnsupportedNorm(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("unknown activation `{0}`")]
    UnknownActivation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CertError>;
