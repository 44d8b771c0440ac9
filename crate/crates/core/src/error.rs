use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation. `field` names the offending
    /// key using its dotted config path.
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// Internal scheduler state became inconsistent. Always a simulator bug.
    #[error("scheduler bookkeeping error: {0}")]
    Bookkeeping(String),

    #[error("time went backwards: now={now}us < last_update={last}us")]
    TimeRegression { now: u64, last: u64 },

    #[error("malformed trace {}: line {line}: {reason}", path.display())]
    MalformedTrace {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("malformed band profile: {0}")]
    MalformedProfile(String),

    #[error("malformed event stream: {0}")]
    MalformedEvents(String),

    #[error("comparison rejected: {0}")]
    Comparison(String),

    #[error("{0}")]
    Usage(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn bookkeeping(msg: impl Into<String>) -> Self {
        Error::Bookkeeping(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for validation/usage problems,
    /// 2 for anything that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig { .. }
            | Error::Usage(_)
            | Error::Toml(_)
            | Error::MalformedProfile(_)
            | Error::Comparison(_) => 1,
            _ => 2,
        }
    }
}
