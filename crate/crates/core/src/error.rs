use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record in an input file does not match its schema.
    #[error("{}:{line}: `{field}`: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    /// Records parse but contradict each other or the document they point into.
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    /// Network failure talking to a remote linker, knowledge store or provider.
    /// Retrying may succeed.
    #[error("transport error: {0}")]
    Transport(String),
    /// A remote service answered, but with something we cannot use.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("index format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure came from a remote dependency rather than the caller.
    pub fn is_upstream(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::Protocol(_))
    }
}
