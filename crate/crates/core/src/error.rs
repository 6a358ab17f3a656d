use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a mathematical precondition (range, shape, sign).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("metric error: {0}")]
    Metric(String),
    /// The finite-difference oracle produced a non-finite value.
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("missing cubemap face file(s): {}", .0.join(", "))]
    MissingFaces(Vec<String>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for errors caused by invalid values rather than unreadable files.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::Alignment(_) | Error::Metric(_) | Error::Oracle(_)
        )
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
