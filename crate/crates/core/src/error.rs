use thiserror::Error;

use crate::envsim::EnvError;
use crate::episode::ObserverError;
use crate::neural::NeuralError;
use crate::shaping::ShapingError;

/// Errors raised by the training loops.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("training stopped by episode observer: {0}")]
    Aborted(ObserverError),
}

pub type Result<T> = std::result::Result<T, TrainError>;
