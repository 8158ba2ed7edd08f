use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Semantic configuration error attributed to one or more keys.
    #[error("configuration error at `{key}`: {message}")]
    ConfigKey { key: String, message: String },

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("bridge sampling is only available for Wiener noise (got {kind}); use the grid loss instead")]
    UnsupportedBridge { kind: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("division by zero while evaluating expression at column {column}")]
    DivisionByZero { column: usize },

    #[error("non-finite value in {stage} at index {index}")]
    NonFinite { stage: &'static str, index: usize },

    #[error("cannot bound trajectory: neither a Lipschitz constant nor a drift bound is known")]
    CannotBound,

    #[error("training diverged at epoch {epoch}: batch loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config_key(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigKey {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable tag used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::Config(_) | Error::ConfigKey { .. } => "config",
            Error::Syntax { .. } => "syntax",
            Error::Domain(_) => "domain",
            Error::UnsupportedBridge { .. } => "unsupported-bridge",
            Error::Unsupported(_) => "unsupported",
            Error::DivisionByZero { .. } => "division-by-zero",
            Error::NonFinite { .. } => "non-finite",
            Error::CannotBound => "cannot-bound",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }
}
