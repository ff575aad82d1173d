//! Dataset manifests, evaluation-set assembly and the synthetic corpus.

mod manifest;
mod synth;

pub use manifest::{build_eval_set, DatasetManifest, ManifestEntry, Split, NEGATIVE_LABEL};
pub use synth::{babble, class_recipe, negative_stream, synth_dataset, synth_utterance, SegmentRecipe, SynthConfig};

use std::path::PathBuf;

use thiserror::Error;

use crate::audio::AudioError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("manifest line {line}: audio file {path} does not exist")]
    MissingFile { line: usize, path: PathBuf },
    #[error("manifest has no training entries")]
    EmptyManifest,
    #[error("split `{0}` has no usable entries")]
    EmptySplit(Split),
    #[error("invalid dataset request: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Audio {
        path: PathBuf,
        #[source]
        source: AudioError,
    },
}
