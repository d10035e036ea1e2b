use thiserror::Error;

/// Errors raised by the library and mapped onto CLI exit codes.
#[derive(Debug, Error)]
pub enum StelarError {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),
    /// Input data is malformed or violates a data invariant.
    #[error("data error: {0}")]
    Data(String),
    /// A numerical routine failed (singular system, non-finite iterate).
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl StelarError {
    pub fn usage(msg: impl Into<String>) -> Self {
        StelarError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        StelarError::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        StelarError::Numerical(msg.into())
    }

    /// The message without the category prefix.
    pub fn message(&self) -> String {
        match self {
            StelarError::Usage(m) | StelarError::Data(m) | StelarError::Numerical(m) => m.clone(),
            StelarError::Io(e) => e.to_string(),
        }
    }

    /// Process exit code: 1 usage, 2 data (including I/O), 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            StelarError::Usage(_) => 1,
            StelarError::Data(_) | StelarError::Io(_) => 2,
            StelarError::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, StelarError>;
