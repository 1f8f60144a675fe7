use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polynomial order {0}: must be at least 1")]
    InvalidOrder(usize),

    #[error("invalid mesh configuration: {0}")]
    InvalidMesh(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("rank {0} owns no elements")]
    EmptyPartition(usize),

    #[error("graph integrity error: {0}")]
    Integrity(String),

    #[error("uninitialized data: {0}")]
    Uninitialized(&'static str),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("collective error: {0}")]
    Collective(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("parameter replicas diverged at step {step}: tensor `{tensor}` differs on rank {rank}")]
    Divergence {
        step: usize,
        rank: usize,
        tensor: String,
    },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
