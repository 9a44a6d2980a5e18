use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the pipeline.
///
/// Each variant falls into one of the exit-code classes used by the CLI
/// (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(
        "input of {pieces} pieces exceeds max_positions {max}; {excess} pieces must be truncated"
    )]
    Overlong {
        pieces: usize,
        max: usize,
        excess: usize,
    },

    #[error("lexelt `{0}` has no trained parameters or index entries")]
    UnseenLexelt(String),

    #[error("no gradient tracked for parameter `{0}`")]
    UntrackedParameter(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code for this error class: 2 input error, 3 numeric
    /// failure, 4 configuration mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 3,
            Error::ConfigMismatch(_) | Error::Shape(_) => 4,
            _ => 2,
        }
    }
}
