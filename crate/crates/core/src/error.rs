use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum BinnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("entity `{entity}` in layer {layer} has no inputs")]
    EmptyEntity { layer: usize, entity: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("insufficient lines: {0}")]
    InsufficientLines(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {state}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        state: String,
    },
    #[error("singular linear system (rank-deficient design with zero penalty)")]
    SingularSystem,
    #[error("no gene has a nonzero coefficient; relax the l1 ratio or penalty")]
    EmptySelection,
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("id mismatch in {context}: {ids:?}")]
    IdMismatch { context: String, ids: Vec<String> },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BinnError {
    /// True for errors caused by bad inputs rather than failures during a run.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            BinnError::NonFiniteLoss { .. }
                | BinnError::SingularSystem
                | BinnError::Io(_)
                | BinnError::DegenerateVariance(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, BinnError>;
