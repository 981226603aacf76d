use crate::numerics::{CheckpointError, NumericsError};

/// Errors raised by the two text models.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("conditional model requires a tag")]
    MissingTag,
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("corpus has no training lines")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("latent has dimension {got}, model expects {expected}")]
    LatentDim { expected: usize, got: usize },
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
}

pub(crate) fn check_temperature(t: f64) -> Result<(), ModelError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonPositiveTemperature(t))
    }
}
