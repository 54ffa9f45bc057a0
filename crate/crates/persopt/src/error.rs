//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by model fitting, optimization, and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("point is within the duplicate tolerance of an existing design point")]
    DuplicatePoint,

    #[error("correlation matrix factorization failed after escalating the nugget to {nugget:e}")]
    Factorization { nugget: f64 },

    #[error("regressor matrix is rank deficient (rank {rank} < {cols} columns)")]
    DegenerateDesign { rank: usize, cols: usize },

    #[error("objective returned no finite value on the candidate set")]
    NonFiniteObjective,

    #[error("non-finite value {value} at a quadrature node")]
    NonFiniteCost { value: f64 },

    #[error("evaluation budget exhausted (cap {cap})")]
    BudgetExhausted { cap: u64 },

    #[error("input outside the declared domain: {0}")]
    OutOfDomain(String),

    #[error("unknown function id `{0}`")]
    UnknownFunction(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
