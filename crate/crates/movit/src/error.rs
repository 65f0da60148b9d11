use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum MovitError {
    /// Tensor shapes incompatible for the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A documented precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A forward value or gradient became non-finite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Malformed bank / prototype / checkpoint file.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Invalid configuration key, value, or combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// Memory lookup could not be performed.
    #[error("retrieval error: {0}")]
    Retrieval(String),

    /// Optimizer received a non-finite gradient.
    #[error("optimizer error: parameter `{name}`: {message}")]
    Optimizer { name: String, message: String },

    /// Artifacts (checkpoint, bank, dataset) do not fit together.
    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl MovitError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        MovitError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, MovitError>;
