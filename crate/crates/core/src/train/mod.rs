//! Word-classification training with babble augmentation, Adam on a plateau
//! schedule, and two-stage (dev loss, then internal-val QbyE) validation.

mod batches;
mod config;
mod fit;
mod protocol;
mod state;

pub use batches::{build_batches, Batch, Batches, LabeledSet};
pub use config::TrainConfig;
pub use fit::{fit, EpochRecord, TrainInputs, TrainSummary};
pub use protocol::{
    schedule_lr, validate_two_stage, InternalValidator, LrDecision, QbyeValidator, ValMetric, ValidationDecision,
};
pub use state::{train_epoch, TrainState};

use thiserror::Error;

use crate::audio::AudioError;
use crate::data::{DataError, Split};
use crate::encoder::EncoderError;
use crate::eval::EvalError;
use crate::losses::LossError;
use crate::nn::checkpoint::CheckpointError;
use crate::nn::NumericError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least {need} training entries, found {found}")]
    EmptyManifest { need: usize, found: usize },
    #[error("split `{0}` is empty")]
    EmptySplit(Split),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
