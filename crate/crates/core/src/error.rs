use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: malformed record: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("preference ordering violated: winner {winner} is not above loser {loser}")]
    Ordering { winner: f64, loser: f64 },

    #[error("distance must be positive, got {0}")]
    Domain(f64),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Malformed { .. } | Error::Io { .. } => 3,
            Error::Numeric(_) | Error::Ordering { .. } | Error::Domain(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
