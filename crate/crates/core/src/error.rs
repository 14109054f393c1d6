use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum CpdsError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The solution concept produced no solution for some utility draw.
    #[error("empty solution set{}: {context}", draw.map(|d| format!(" at draw {d}")).unwrap_or_default())]
    Empty { context: String, draw: Option<u64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error at line {line}: {message}")]
    Ingestion { line: usize, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{count} draw(s) produced an indeterminate must-test")]
    Indeterminate { count: u64 },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse, machine-readable error classes used for process exit codes and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Internal,
    Config,
    Emptiness,
    Indeterminate,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Internal => 1,
            ErrorClass::Config => 2,
            ErrorClass::Emptiness => 3,
            ErrorClass::Indeterminate => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Internal => "internal",
            ErrorClass::Config => "config",
            ErrorClass::Emptiness => "emptiness",
            ErrorClass::Indeterminate => "indeterminate",
        }
    }
}

impl CpdsError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CpdsError::Empty { .. } => ErrorClass::Emptiness,
            CpdsError::Indeterminate { .. } => ErrorClass::Indeterminate,
            CpdsError::Lp(_) => ErrorClass::Internal,
            _ => ErrorClass::Config,
        }
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        CpdsError::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CpdsError::Config(msg.into())
    }
}

pub type Result<T, E = CpdsError> = std::result::Result<T, E>;
