use thiserror::Error;

/// Errors produced anywhere in the preparation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument or configuration value violates a precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Malformed input text (FCIDUMP, operator strings, config documents).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A dense or materialized object would exceed the configured size limit.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// The numerics left the physical domain (trace drift, negative radicands, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    /// Prefix the message with the pipeline stage that raised it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::Parameter(m) => Error::Parameter(format!("{stage}: {m}")),
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{stage}: {message}"),
            },
            Error::Capacity(m) => Error::Capacity(format!("{stage}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{stage}: {m}")),
            Error::Config(m) => Error::Config(format!("{stage}: {m}")),
            Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{stage}: {e}"))),
        }
    }

    /// Process exit code used by the command-line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Config(_) | Error::Io(_) => 2,
            Error::Parse { .. } => 3,
            Error::Capacity(_) => 4,
            Error::Numerical(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
