use thiserror::Error;

use crate::gp::{KernelKind, KernelParams};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimensionMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("kernel matrix not positive definite ({kind:?}, {params:?}, max jitter {max_jitter:e})")]
    NotPositiveDefinite {
        kind: KernelKind,
        params: KernelParams,
        max_jitter: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite gradient at coordinate {coordinate} ({context})")]
    NonFiniteGradient {
        context: &'static str,
        coordinate: usize,
    },

    #[error("training aborted: {0}")]
    Diverged(String),

    #[error("objective failed twice in a row at step {step}")]
    ObjectiveFailed { step: usize },

    #[error("column {name:?} not found; available headers: {available:?}")]
    MissingColumn { name: String, available: Vec<String> },

    #[error("dataset is empty after parsing {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn mismatch(
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    ) -> Self {
        Error::DimensionMismatch {
            context,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }
}
