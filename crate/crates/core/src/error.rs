use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain of the operation (e.g. non-positive inverse depth).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("operation requires a {expected} stereo geometry")]
    UnsupportedGeometry { expected: &'static str },

    /// Nothing to work with: no valid pixels, no seeds, no points.
    #[error("no data: {0}")]
    NoData(String),

    /// Input is numerically degenerate (collinear samples, empty projections).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
