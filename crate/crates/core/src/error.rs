use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the transfer-learning library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("synthetic generation failed for domain `{domain}` after {attempts} draws (labeler too unbalanced)")]
    GenerationFailed { domain: String, attempts: usize },

    #[error("labeled fraction {0} outside [0, 1]")]
    InvalidFraction(f64),

    #[error("domain `{0}` must be fully labeled before splitting")]
    NotFullyLabeled(String),

    #[error("{path}: no rows")]
    NoRows { path: PathBuf },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("all points are identical; bandwidth is undefined")]
    DegenerateBandwidth,

    #[error("all example weights are zero")]
    AllWeightsZero,

    #[error("probability vector does not sum to 1 (sum = {0})")]
    NotNormalized(f64),

    #[error("query budget exhausted ({spent} of {total})")]
    BudgetExhausted { spent: usize, total: usize },

    #[error("no unlabeled data left in {0}")]
    NoUnlabeled(String),

    #[error("{aborted} of {total} trials aborted (limit is 10%)")]
    TooManyAborts { aborted: usize, total: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
