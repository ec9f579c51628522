use thiserror::Error;

use crate::em::FitTrace;

pub type Result<T> = std::result::Result<T, PcpError>;

#[derive(Debug, Error)]
pub enum PcpError {
    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("invalid mode pair ({k}, {l}) for a tensor of order {order}: need k < l and order > 2")]
    InvalidModePair { k: usize, l: usize, order: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("division by zero at flat index {index}")]
    DivisionByZero { index: usize },

    #[error("{what} must be strictly positive; entry {index} is {value}")]
    NonPositive {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("count tensor entry {index} is {value}, not a non-negative integer")]
    NotACount { index: usize, value: f64 },

    #[error("mode-{mode} marginal has a zero at index {index}")]
    ZeroMarginal { mode: usize, index: usize },

    #[error("factor matrices disagree on the number of columns")]
    RankMismatch,

    #[error("Khatri-Rao product over an empty list of matrices")]
    EmptyProduct,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loglikelihood at iteration {iteration}")]
    NonFinite { iteration: usize, trace: FitTrace },

    #[error("{0} is numerically singular")]
    Singular(&'static str),

    #[error("symmetric eigensolver did not converge")]
    EigenNoConvergence,

    #[error("Fisher matrix of order {order} exceeds the cap of {cap} (needs about {bytes} bytes)")]
    OrderCap { order: usize, cap: usize, bytes: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
