use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },

    #[error("patch of size {size:?} does not fit in field of shape {shape:?}")]
    PatchTooLarge { size: Vec<usize>, shape: Vec<usize> },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced or supplied")]
    NonFinite,

    #[error("could not place {what} without overlap after {attempts} attempts")]
    PlacementFailed { what: &'static str, attempts: usize },

    #[error("not enough elements: need at least {needed}, got {got}")]
    TooFew { needed: usize, got: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
