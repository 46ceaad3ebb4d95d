use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },

    /// A byte stream or text that does not follow its documented layout.
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    /// NaN or infinity produced inside a named network block.
    #[error("numeric failure in {block} ({op})")]
    Numeric { block: String, op: &'static str },

    /// Any other engine error raised inside a named block.
    #[error("{block}: {source}")]
    Engine {
        block: String,
        #[source]
        source: oce_autograd::Error,
    },

    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io { path: path.into(), msg: err.to_string() }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

/// Attaches a block name to engine errors.
pub trait InBlock<T> {
    fn in_block(self, block: &str) -> Result<T>;
}

impl<T> InBlock<T> for oce_autograd::Result<T> {
    fn in_block(self, block: &str) -> Result<T> {
        self.map_err(|e| match e {
            oce_autograd::Error::NonFinite { op } => Error::Numeric { block: block.to_string(), op },
            source => Error::Engine { block: block.to_string(), source },
        })
    }
}
