use thiserror::Error;

/// Error type shared across the library.
#[derive(Debug, Error)]
pub enum FuseError {
    /// Two tensor shapes that must agree do not.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller broke an operation's contract (preconditions, state).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A batch that cannot be reduced (e.g. every position masked out).
    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    /// Bad configuration value or preset.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed dataset, checkpoint, or report file.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FuseError {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        FuseError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        FuseError::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, FuseError>;
