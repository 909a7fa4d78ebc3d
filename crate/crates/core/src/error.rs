use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a documented invariant (bad index, empty input, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Operand shapes or sizes are incompatible.
    #[error("shape/contract error: {0}")]
    Contract(String),

    /// A value was non-finite or otherwise numerically undefined.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// No teacher graph is registered for the requested knockdown gene.
    #[error("no teacher GRN registered for gene index {0}")]
    MissingTeacher(usize),

    /// A file could not be parsed.
    #[error("{path}: {context}: {message}")]
    Parse {
        path: PathBuf,
        context: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        context: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            context: context.into(),
            message: message.into(),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    };
}

pub(crate) use ensure;
