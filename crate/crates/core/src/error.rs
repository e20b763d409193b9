use thiserror::Error;

use crate::tensor::Shape4;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input tensor does not have the shape an operation requires.
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A normalization configuration that cannot be applied to the input,
    /// such as a group count that does not divide the channel count.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("normalization kind {0} keeps no running statistics")]
    UnsupportedKind(String),

    /// The caller violated an API contract (wrong handle, mismatched cache).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: Shape4) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
