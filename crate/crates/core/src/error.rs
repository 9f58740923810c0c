use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input that violates the session schema or label set.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A response that does not match the outstanding prompt.
    #[error("protocol error: expected {expected}, got {got}")]
    Protocol { expected: String, got: String },

    #[error("unsupported by this model: {0}")]
    Capability(String),

    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("corrupt log at seq {seq}: {message}")]
    CorruptLog { seq: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn protocol(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Protocol {
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn corrupt(seq: u64, message: impl Into<String>) -> Self {
        Error::CorruptLog {
            seq,
            message: message.into(),
        }
    }
}
