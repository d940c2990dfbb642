use std::io;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid shapes, sizes or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a documented invariant (label range, pixel range...).
    #[error("data error: {0}")]
    Data(String),

    /// An operation was called outside its domain (empty dataset, too-short
    /// sequence...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A binary file does not follow its declared format.
    #[error("format error in {file}: {message}")]
    Format { file: String, message: String },

    /// Two inputs that must agree (e.g. image and label counts) do not.
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("i/o error ({context}): {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    /// A NaN or infinity appeared where a finite value is required.
    #[error("numerical overflow: non-finite value in {location}")]
    NumericalOverflow { location: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn overflow(location: impl Into<String>) -> Self {
        Error::NumericalOverflow {
            location: location.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
