use thiserror::Error;

/// Library-wide error type.
///
/// Variants map onto the CLI exit-code categories: `InvalidArgument` and
/// `Config` exit 3, `Io` and `Format` exit 4, `Internal` exit 5.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 3,
            Error::Io(_) | Error::Format(_) => 4,
            Error::Internal(_) => 5,
        }
    }
}

#[macro_export]
macro_rules! invalid_arg {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}
