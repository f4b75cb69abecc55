use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("data generation failed: {0}")]
    Generation(String),
    #[error("non-finite value in term `{term}`")]
    Evaluation { term: String },
    #[error("training failed at batch {batch}: {reason}")]
    Training { batch: usize, reason: String },
    #[error("inference failed at step {step}: {reason}")]
    Inference { step: usize, reason: String },
    #[error("ODE solver failed: {0}")]
    Solver(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn eval(term: impl Into<String>) -> Self {
        Error::Evaluation { term: term.into() }
    }
}
