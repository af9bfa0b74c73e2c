use std::io;

use thiserror::Error;

/// Errors produced by every layer of the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A record failed validation. `field` names the offending key.
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },

    #[error("duplicate event id `{0}`")]
    DuplicateEvent(String),

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("deck `{0}` is not part of the feature schema")]
    StaleSchema(String),

    #[error("vector length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("no prediction available for user `{user}` on deck `{deck}`")]
    NoPrediction { user: String, deck: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn field(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidField { field, reason: reason.into() }
    }

    /// Whether the error stems from bad input rather than I/O.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
