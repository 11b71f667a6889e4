use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents that do not fit together.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Path enumeration would exceed the configured cap.
    #[error("path enumeration exceeded the cap of {cap} paths")]
    Capacity { cap: usize },

    /// Malformed input file.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// A loss or gradient became NaN/Inf during training.
    #[error("non-finite value encountered at parameter `{path}`")]
    NonFinite { path: String },

    /// A numerical check missed its tolerance.
    #[error("numeric check failed: {0}")]
    Numeric(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
