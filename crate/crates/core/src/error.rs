use thiserror::Error;

#[derive(Debug, Error)]
pub enum RekpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("no learnable knowledge: {0}")]
    NoKnowledge(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, RekpError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(RekpError::InvalidArgument(msg.into()))
}
