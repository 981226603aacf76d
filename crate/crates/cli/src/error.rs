use seedline_core::corpus::CorpusError;
use seedline_core::pipeline::PipelineError;
use seedline_core::{CheckpointError, ModelError, WundtError};
use seedline_service::ServiceError;

/// Command failure, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or input files. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that fails after the inputs were accepted. Exit code 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => CliError::runtime(e),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match &e {
            CheckpointError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => CliError::runtime(e),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Checkpoint(c) => c.into(),
            ModelError::MissingTag
            | ModelError::UnknownTag(_)
            | ModelError::NonPositiveTemperature(_)
            | ModelError::EmptyCorpus
            | ModelError::InvalidConfig(_)
            | ModelError::BadParams(_) => CliError::Usage(e.to_string()),
            _ => CliError::runtime(e),
        }
    }
}

impl From<WundtError> for CliError {
    fn from(e: WundtError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Model(m) => m.into(),
            PipelineError::Band(b) => b.into(),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e.code() {
            "bad_params" | "checkpoint_mismatch" | "session_not_found" | "corrupt_session" => CliError::Usage(e.to_string()),
            _ => CliError::runtime(e),
        }
    }
}
