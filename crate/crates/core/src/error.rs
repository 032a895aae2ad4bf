use std::io;

use crate::graph::VertexId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vertex {0} not found")]
    VertexNotFound(VertexId),

    #[error("index {index} out of bounds (len {len})")]
    OutOfBounds { index: usize, len: usize },

    #[error("partition {partition} is empty; metrics are undefined")]
    DegeneratePartition { partition: usize },

    #[error("partition {0} has no edges")]
    EmptyPartition(usize),

    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("shard {shard} unavailable: {reason}")]
    ShardUnavailable { shard: u16, reason: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("unknown seed vertices: {0:?}")]
    UnknownSeeds(Vec<VertexId>),

    #[error("cache error: {0}")]
    Cache(String),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than the runtime environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::InvalidArgument(_)
                | Error::UnknownSeeds(_)
        )
    }
}
