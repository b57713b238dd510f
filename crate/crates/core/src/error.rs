use alloc::string::String;

/// Errors raised by the inference core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("location ({row}, {col}) is not valid for inference")]
    InvalidRecord { row: usize, col: usize },

    #[error("node {0:?} is absent from this location")]
    AbsentNode(crate::model::NodeId),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite bound at cell ({row}, {col}), epoch {epoch}: {detail}")]
    NonFinite {
        row: usize,
        col: usize,
        epoch: usize,
        detail: String,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
