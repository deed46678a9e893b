use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutogradError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("degenerate segment: {0}")]
    DegenerateSegment(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AutogradError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AutogradError::Shape(msg.into()))
}
