use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code families:
/// `Config` is a usage problem, `Numeric` a numeric failure, and the rest
/// are data/state problems.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// A caller violated an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// A corpus, sidecar, or embedding file could not be ingested.
    #[error("ingest error: {0}")]
    Ingest(String),

    /// Non-finite loss or gradient during training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Checkpoint serialization or validation failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn ingest(msg: impl Into<String>) -> Self {
        Error::Ingest(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }
}
