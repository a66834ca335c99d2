use std::path::PathBuf;

/// Errors produced by the level-set library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("evolution diverged at step {step}")]
    Divergence { step: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
