//! Crate-wide error type.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors surfaced by the engine, the data pipeline and the trainer.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A scalar argument is out of its legal range.
    InvalidArgument { op: &'static str, msg: String },
    /// A token id is outside the encoder's vocabulary.
    Vocabulary { token_id: usize, vocab_size: usize },
    /// Dataset contents violate a structural invariant.
    Data { msg: String },
    /// A checkpoint could not be decoded or does not match the model.
    Checkpoint { msg: String },
    /// The loss became NaN or infinite during training.
    NonFinite { step: usize },
    /// An analysis routine was handed an unusable run record.
    Analysis { msg: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            Error::InvalidArgument { op, msg } => write!(f, "{op}: {msg}"),
            Error::Vocabulary {
                token_id,
                vocab_size,
            } => write!(f, "token id {token_id} out of vocabulary (size {vocab_size})"),
            Error::Data { msg } => write!(f, "data error: {msg}"),
            Error::Checkpoint { msg } => write!(f, "checkpoint error: {msg}"),
            Error::NonFinite { step } => {
                write!(f, "non-finite loss at optimizer step {step}")
            }
            Error::Analysis { msg } => write!(f, "analysis error: {msg}"),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
