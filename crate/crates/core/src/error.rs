//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants map onto the
//! failure classes callers care about: shape mismatches, bad inputs, broken
//! caller contracts, malformed files, out-of-range indices, and training
//! divergence.

/// Unified error type for the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands have incompatible shapes. Names the operation and both shapes.
    #[error("shape mismatch in {op}: left {left:?} vs right {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Input data is invalid (non-finite values, empty where non-empty is
    /// required, corpus too small, and similar).
    #[error("invalid input: {0}")]
    Input(String),

    /// A caller contract was violated (ids don't match the text they claim to
    /// encode, mismatched prompt lengths, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A serialized artifact (vocab file, checkpoint, dataset, report) is
    /// malformed or truncated.
    #[error("format error: {0}")]
    Format(String),

    /// An index (layer, head, dim, position, token id) is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
