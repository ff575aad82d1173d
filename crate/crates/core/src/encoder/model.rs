use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{EmbeddingVector, Encoder, EncoderConfig, EncoderError};
use crate::audio::{AudioClip, FbankExtractor, FeatureConfig, FeatureMatrix};
use crate::kv::KvBlock;
use crate::nn::checkpoint::Checkpoint;

/// SHA-256 of a model's inference serialization.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Frozen feature front end plus encoder: audio in, unit-norm embedding out.
#[derive(Clone, Debug)]
pub struct EmbeddingModel {
    encoder: Encoder<f32>,
    extractor: FbankExtractor,
}

impl EmbeddingModel {
    pub fn new(features: &FeatureConfig, encoder: Encoder<f32>) -> Result<Self, EncoderError> {
        if features.feature_dim() != encoder.config().input_dim {
            return Err(EncoderError::InvalidConfig(format!(
                "features produce {} dims but the encoder expects {}",
                features.feature_dim(),
                encoder.config().input_dim
            )));
        }
        Ok(Self {
            extractor: FbankExtractor::new(features)?,
            encoder,
        })
    }

    pub fn encoder(&self) -> &Encoder<f32> {
        &self.encoder
    }

    pub fn into_encoder(self) -> Encoder<f32> {
        self.encoder
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        self.extractor.config()
    }

    pub fn extractor(&self) -> &FbankExtractor {
        &self.extractor
    }

    pub fn features(&self, samples: &[f32]) -> Result<FeatureMatrix, EncoderError> {
        Ok(self.extractor.compute(samples)?)
    }

    pub fn embed_features(&self, feats: &FeatureMatrix) -> Result<EmbeddingVector, EncoderError> {
        Ok(EmbeddingVector::new(self.encoder.embed(feats.frames())?))
    }

    pub fn embed_samples(&self, samples: &[f32]) -> Result<EmbeddingVector, EncoderError> {
        self.embed_features(&self.features(samples)?)
    }

    /// Eval-mode embedding of a whole clip.
    pub fn embed(&self, clip: &AudioClip) -> Result<EmbeddingVector, EncoderError> {
        self.embed_samples(clip.samples())
    }

    pub fn config_block(features: &FeatureConfig, encoder: &EncoderConfig) -> String {
        let mut kv = KvBlock::new();
        kv.set("features.mel_bins", features.mel_bins);
        kv.set("features.window_ms", features.window_ms);
        kv.set("features.stride_ms", features.stride_ms);
        kv.set("features.delta_mode", features.delta_mode);
        kv.set("features.delta_window", features.delta_window);
        kv.set("features.log_floor", features.log_floor);
        encoder.to_kv(&mut kv);
        kv.to_string()
    }

    pub fn parse_config_block(text: &str) -> Result<(FeatureConfig, EncoderConfig), EncoderError> {
        let kv = KvBlock::parse(text).map_err(EncoderError::InvalidConfig)?;
        let e = EncoderError::InvalidConfig;
        let features = FeatureConfig {
            mel_bins: kv.get("features.mel_bins").map_err(e)?,
            window_ms: kv.get("features.window_ms").map_err(e)?,
            stride_ms: kv.get("features.stride_ms").map_err(e)?,
            delta_mode: kv.get("features.delta_mode").map_err(e)?,
            delta_window: kv.get("features.delta_window").map_err(e)?,
            log_floor: kv.get("features.log_floor").map_err(e)?,
        };
        features.validate()?;
        Ok((features, EncoderConfig::from_kv(&kv)?))
    }

    /// Inference-only checkpoint: config block and encoder tensors.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(Self::config_block(self.feature_config(), self.encoder.config()));
        self.encoder.write_tensors(&mut ck);
        ck
    }

    /// Rebuilds the model from any checkpoint carrying encoder tensors;
    /// extra tensors such as decoder centers or optimizer state are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, EncoderError> {
        let (features, cfg) = Self::parse_config_block(&ck.config)?;
        Self::new(&features, Encoder::read_tensors(&cfg, ck)?)
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint(Sha256::digest(self.to_checkpoint().to_bytes()).into())
    }
}
