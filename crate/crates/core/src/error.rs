use std::io;

/// Errors produced by the library.
///
/// The variants map onto the CLI exit codes: configuration-type errors
/// exit with 2, data errors with 3 and constraint violations with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("non-finite gradient: {0}")]
    NonFinite(String),
    #[error("constraint violation: {0}")]
    Constraint(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Geometry(_) | Error::Config(_) | Error::Shape(_) => 2,
            Error::Constraint(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
