use thiserror::Error;

/// Errors produced anywhere in the attack pipeline.
#[derive(Debug, Error)]
pub enum CemaError {
    #[error("input text is empty or whitespace-only")]
    EmptyText,
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("cosine similarity undefined for zero vector")]
    UndefinedSimilarity,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("victim unavailable: {0}")]
    VictimUnavailable(String),
    #[error("query budget exhausted")]
    BudgetExceeded,
    #[error("wire protocol violation: {0}")]
    Protocol(String),
    #[error("invalid victim configuration: {0}")]
    InvalidVictimConfig(String),
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("degenerate data: clustering cannot produce two clusters")]
    DegenerateData,
    #[error("invalid cluster assignment: {0}")]
    InvalidAssignment(String),
    #[error("invalid training dataset: {0}")]
    InvalidDataset(String),
    #[error("metric does not apply to task: {0}")]
    MetricMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CemaError>;
