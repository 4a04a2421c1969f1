use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that must agree did not.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// An argument outside its documented domain.
    InvalidArgument(String),
    /// A video is too short for the requested number of segments.
    TooShort { id: String, frames: usize, needed: usize },
    /// A training video has no label sequence.
    MissingLabels(String),
    /// A loss or parameter became NaN or infinite.
    NonFinite { context: &'static str, epoch: usize },
    EmptyWindow,
    EmptyInput(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, found {found}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::TooShort { id, frames, needed } => {
                write!(f, "video {id} has {frames} frames, need at least {needed}")
            }
            Error::MissingLabels(id) => write!(f, "no labels for training video {id}"),
            Error::NonFinite { context, epoch } => {
                write!(f, "non-finite value in {context} at epoch {epoch}")
            }
            Error::EmptyWindow => write!(f, "selection window contains no checkpoint"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
        }
    }
}

impl core::error::Error for Error {}

impl Error {
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
