use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate constellation: all points have zero magnitude")]
    DegenerateConstellation,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("computation graph already consumed by a backward pass")]
    GraphConsumed,

    #[error("degenerate batch: no unmasked cells")]
    DegenerateBatch,

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (sigma_n={sigma_n:e}, sigma_phi={sigma_phi:e})"
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        sigma_n: f64,
        sigma_phi: f64,
    },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::DegenerateConstellation | Error::DegenerateBatch => 3,
            Error::Io(_) => 4,
            _ => 2,
        }
    }
}
