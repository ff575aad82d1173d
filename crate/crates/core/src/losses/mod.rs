//! Decoder-side training objectives with analytic gradients: softtriple,
//! softmax cross-entropy and triplet loss with its miners.

mod decoder;
mod mining;
mod softtriple;
mod supervised;

pub use decoder::{Decoder, LossConfig, LossKind, MinerKind};
pub use mining::{batch_hard_mine, levenshtein, levenshtein_mine, levenshtein_str, Triplet};
pub use softtriple::{softtriple_loss, softtriple_similarity, ClassCenters, SoftTripleGrad, UNIT_NORM_TOL};
pub use supervised::{softmax_ce, triplet_loss, LossGrad, TripletGrad};

use thiserror::Error;

use crate::nn::checkpoint::CheckpointError;
use crate::nn::NumericError;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("row {row} has norm {norm}, expected a unit vector")]
    UnnormalizedInput { row: usize, norm: f64 },
    #[error("label {label} is outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no valid triplet: {0}")]
    NoValidTriplet(String),
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<(), LossError> {
    if labels.len() != rows {
        return Err(NumericError::ShapeMismatch {
            op: "labels",
            expected: format!("{rows} labels"),
            got: format!("{}", labels.len()),
        }
        .into());
    }
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(LossError::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}
