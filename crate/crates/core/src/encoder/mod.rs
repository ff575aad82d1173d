//! Batch norm → GRU stack → multi-head self-attention → aggregator, producing
//! a unit-norm utterance embedding.

mod attention;
mod config;
mod model;
mod network;

pub use attention::{
    l2_normalize, l2_normalize_bwd, last_k, last_k_bwd, Aggregator, AggregatorCache, HeadAggregator, HeadCache, Mhe,
    MheCache, TanhAttention, TanhCache,
};
pub use config::{param_breakdown, param_count, AggregatorKind, EncoderConfig};
pub use model::{EmbeddingModel, Fingerprint};
pub use network::{BatchCache, Encoder, SampleCache};

use thiserror::Error;

use crate::audio::AudioError;
use crate::nn::checkpoint::CheckpointError;
use crate::nn::NumericError;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("aggregator weight column {head} has zero norm")]
    ZeroWeightColumn { head: usize },
    #[error("sequence of {t} steps is shorter than last_k = {k}")]
    SequenceTooShort { t: usize, k: usize },
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
}

/// Fixed-length utterance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}
