use thiserror::Error;

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Range { row: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("evaluation returned a non-finite value at coalition {coalition:?}")]
    Evaluation { coalition: Vec<f64> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AuditError {
    /// Whether the failure comes from malformed data or schemas, as opposed to
    /// transport or configuration problems.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            AuditError::Schema(_)
                | AuditError::Range { .. }
                | AuditError::Parse(_)
                | AuditError::EmptyInput(_)
                | AuditError::Dimension { .. }
                | AuditError::Csv(_)
                | AuditError::Json(_)
        )
    }

    pub fn is_provider_error(&self) -> bool {
        matches!(self, AuditError::Provider(_))
    }
}
