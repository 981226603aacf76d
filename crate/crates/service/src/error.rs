use seedline_core::error::ModelError;
use seedline_core::numerics::CheckpointError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session {0:?}")]
    SessionNotFound(String),
    #[error("no line {0} in the pool")]
    UnknownLine(u64),
    #[error("line {0} is not pinned")]
    NotPinned(u64),
    #[error("line {0} appears twice in the arrangement")]
    DuplicateId(u64),
    #[error("{0}")]
    BadParams(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("stored session is inconsistent: {0}")]
    Corrupt(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ServiceError {
    /// Stable machine-readable code used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::SessionNotFound(_) => "session_not_found",
            ServiceError::UnknownLine(_) => "unknown_line",
            ServiceError::NotPinned(_) => "not_pinned",
            ServiceError::DuplicateId(_) => "duplicate_id",
            ServiceError::BadParams(_) => "bad_params",
            ServiceError::CheckpointMismatch(_) => "checkpoint_mismatch",
            ServiceError::Corrupt(_) => "corrupt_session",
            ServiceError::Io { .. } => "io",
            ServiceError::Model(ModelError::NonPositiveTemperature(_) | ModelError::BadParams(_))
            | ServiceError::Model(ModelError::UnknownTag(_) | ModelError::MissingTag) => "bad_params",
            ServiceError::Model(_) => "model",
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ServiceError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<CheckpointError> for ServiceError {
    fn from(e: CheckpointError) -> Self {
        ServiceError::CheckpointMismatch(e.to_string())
    }
}
