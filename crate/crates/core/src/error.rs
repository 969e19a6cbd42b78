use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unrecognized verification label {0:?}")]
    UnknownLabel(String),

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("claim {claim_id} cannot be masked: {reason}")]
    Unmaskable { claim_id: u64, reason: String },

    #[error("token index {index} out of range for a claim with {len} tokens")]
    TokenIndex { index: usize, len: usize },

    #[error("backend has no prediction for {masked_text:?}")]
    NoPrediction { masked_text: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("model file is malformed: {0}")]
    ModelFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code used in service error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownLabel(_) => "unknown_label",
            Error::Record { .. } => "malformed_record",
            Error::Unmaskable { .. } => "unmaskable",
            Error::TokenIndex { .. } => "token_index_out_of_range",
            Error::NoPrediction { .. } => "no_prediction",
            Error::NotFound(_) => "not_found",
            Error::Backend(_) => "backend_failure",
            Error::Config(_) => "configuration",
            Error::Invalid(_) => "invalid_input",
            Error::ModelFormat(_) => "model_format",
            Error::Io { .. } => "io",
            Error::Json(_) => "malformed_json",
        }
    }
}
