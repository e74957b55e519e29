use thiserror::Error;

/// Errors raised while building or reading hyper-relational graphs.
#[derive(Debug, Error)]
pub enum HkgError {
    #[error("empty label")]
    EmptyLabel,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing field `{field}` at line {line}")]
    MissingField { line: usize, field: &'static str },

    #[error("edge ({0}, {1}) is not in the graph")]
    MissingEdge(usize, usize),

    #[error("graph has {nodes} nodes, brute-force oracle accepts at most {limit}")]
    GraphTooLarge { nodes: usize, limit: usize },

    #[error("fact arity {arity} exceeds configured maximum {limit}")]
    ArityTooLarge { arity: usize, limit: usize },

    #[error("vocabulary hash mismatch: checkpoint {checkpoint}, data {data}")]
    VocabMismatch { checkpoint: String, data: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("true answer {0} is inside its own filter set")]
    FilterContainsTarget(usize),

    #[error(transparent)]
    Shape(#[from] crate::tensor::ShapeError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HkgError {
    /// Coarse category used for exit codes and machine-readable error lines.
    pub fn category(&self) -> ErrorCategory {
        match self {
            HkgError::Config(_) | HkgError::ArityTooLarge { .. } => ErrorCategory::Config,
            HkgError::Io(_) => ErrorCategory::Io,
            HkgError::Shape(_) | HkgError::FilterContainsTarget(_) => ErrorCategory::Internal,
            _ => ErrorCategory::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Io,
    Internal,
}

pub type Result<T, E = HkgError> = std::result::Result<T, E>;
