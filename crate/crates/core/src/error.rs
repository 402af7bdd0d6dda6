use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence must contain at least one token")]
    EmptySequence,

    #[error("token_ids and logprobs differ in length ({tokens} vs {logprobs})")]
    LengthMismatch { tokens: usize, logprobs: usize },

    #[error("invalid log-probability {value} at position {position}: must be <= 0 or -inf")]
    InvalidLogProb { position: usize, value: f64 },

    #[error("{what} must not be empty")]
    EmptyInput { what: &'static str },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("attack data contains a single membership class; cannot train an attack model")]
    SingleClass,

    #[error("corpus has {actual} documents, at least {minimum} are required")]
    CorpusTooSmall { minimum: usize, actual: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:{}", .0.iter().map(|v| format!("\n  {v}")).collect::<String>())]
    InvalidConfig(Vec<crate::experiment::Violation>),

    #[error("schema error in field `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("line {line}: {source}")]
    Jsonl {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Wraps `self` with the name of the pipeline stage that produced it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
