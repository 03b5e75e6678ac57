use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GeoError>;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A NaN or infinity showed up during training or evaluation.
    #[error("numeric failure in {context}")]
    NumericFailure { context: String },

    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GeoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GeoError::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(context: impl Into<String>) -> Self {
        GeoError::NumericFailure {
            context: context.into(),
        }
    }

    pub(crate) fn parse(
        source_name: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        GeoError::Parse {
            source_name: source_name.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GeoError::Io {
            path: path.into(),
            source,
        }
    }
}
