use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors produced by the core computations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A model configuration violates one of its invariants.
    InvalidConfig(String),
    /// A tensor required by the naming convention is absent.
    MissingTensor(String),
    /// A tensor is present but has the wrong shape.
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    /// A weight or intermediate value is NaN or infinite.
    NonFinite(String),
    /// Token sequence longer than the model context.
    ContextOverflow { len: usize, max: usize },
    /// Forward pass requested on an empty sequence.
    EmptyInput,
    /// A token id outside the vocabulary.
    TokenOutOfRange { token: u32, vocab_size: usize },
    /// A layer, position, class or `k` index out of range.
    Index { what: &'static str, index: usize, len: usize },
    /// Arguments that are well-typed but semantically unusable.
    InvalidInput(String),
    /// Not enough distractor documents to fill the requested context.
    PoolExhausted { needed: usize, available: usize },
    /// Probe training data with fewer than two usable classes.
    DegenerateLabels(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(msg) => write!(f, "invalid model config: {msg}"),
            Error::MissingTensor(name) => write!(f, "missing tensor `{name}`"),
            Error::ShapeMismatch {
                name,
                expected,
                found,
            } => write!(
                f,
                "shape mismatch for `{name}`: expected {expected:?}, found {found:?}"
            ),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::ContextOverflow { len, max } => {
                write!(f, "sequence of {len} tokens exceeds context of {max}")
            }
            Error::EmptyInput => f.write_str("empty token sequence"),
            Error::TokenOutOfRange { token, vocab_size } => {
                write!(f, "token id {token} outside vocabulary of {vocab_size}")
            }
            Error::Index { what, index, len } => {
                write!(f, "{what} index {index} out of range (len {len})")
            }
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::PoolExhausted { needed, available } => write!(
                f,
                "distractor pool exhausted: need {needed}, have {available}"
            ),
            Error::DegenerateLabels(msg) => write!(f, "degenerate labels: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
