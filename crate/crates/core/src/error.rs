use alloc::string::String;
use core::fmt;

/// Errors produced by the algorithmic core.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A configuration value violates its documented constraints.
    InvalidConfig(String),
    /// Tensor or mask shapes do not line up.
    ShapeMismatch(String),
    /// A mask or prediction contains a class id outside `0..K`.
    ClassOutOfRange { value: usize, num_classes: usize, context: String },
    /// A blend request cannot be satisfied by the available image pool.
    InsufficientPool(String),
    /// A source image has no eligible style-pair target.
    Unpairable { source_id: String, classes: alloc::vec::Vec<usize> },
    /// Numerical failure (singular matrix, NaN loss, ...).
    Numerical(String),
    /// A downstream trainer or evaluator failed inside a loop.
    StageFailed { stage: String, detail: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            CoreError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            CoreError::ClassOutOfRange { value, num_classes, context } => {
                write!(f, "class id {value} out of range (K={num_classes}) in {context}")
            }
            CoreError::InsufficientPool(msg) => write!(f, "insufficient image pool: {msg}"),
            CoreError::Unpairable { source_id, classes } => {
                write!(f, "no eligible style target for source '{source_id}' with classes {classes:?}")
            }
            CoreError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            CoreError::StageFailed { stage, detail } => write!(f, "stage '{stage}' failed: {detail}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
