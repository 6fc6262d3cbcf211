use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value lies outside its supported range.
    #[error("configuration error: {0}")]
    Config(String),

    /// The requested computation needs a table larger than the exact-enumeration ceiling.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// An argument violates an operation's precondition.
    #[error("argument error: {0}")]
    Argument(String),

    /// A regression could not be solved (usually too few distinct samples).
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A characteristic function or engine produced a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Degenerate input such as a zero-norm embedding or an all-nonpositive plan.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Capacity(_) => "capacity",
            Error::Argument(_) => "argument",
            Error::Estimation(_) => "estimation",
            Error::NonFinite(_) => "non_finite",
            Error::Degenerate(_) => "degenerate",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
