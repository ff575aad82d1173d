use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::protocol::ValMetric;
use super::{Batch, LabeledSet, TrainConfig, TrainError};
use crate::audio::{FbankExtractor, FeatureConfig};
use crate::encoder::{EmbeddingModel, Encoder, EncoderConfig};
use crate::losses::Decoder;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{AdamConfig, AdamState, BnMode, Module, Parameter, Tensor};
use crate::util::{derive_seed, par_map};

/// Model, optimizer and bookkeeping of one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub cfg: TrainConfig,
    pub encoder: Encoder<f32>,
    pub decoder: Decoder<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub best_dev_loss: f64,
    pub best_val: Option<ValMetric>,
    pub dev_history: Vec<f64>,
    pub vocab: Vec<String>,
    extractor: FbankExtractor,
}

impl TrainState {
    pub fn new(
        features: &FeatureConfig,
        enc_cfg: &EncoderConfig,
        cfg: &TrainConfig,
        vocab: Vec<String>,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if vocab.len() < 2 {
            return Err(TrainError::TooFewClasses(vocab.len()));
        }
        if features.feature_dim() != enc_cfg.input_dim {
            return Err(TrainError::InvalidConfig(format!(
                "features produce {} dims but the encoder expects {}",
                features.feature_dim(),
                enc_cfg.input_dim
            )));
        }
        let encoder = Encoder::new(enc_cfg, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "encoder")))?;
        let decoder = Decoder::new(
            &cfg.loss,
            &vocab,
            encoder.embedding_dim(),
            &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "decoder")),
        )?;
        let mut params = encoder.params();
        params.extend(decoder.params());
        let adam = AdamState::new(
            &params,
            AdamConfig {
                lr: cfg.lr0,
                ..AdamConfig::default()
            },
        );
        Ok(Self {
            cfg: cfg.clone(),
            extractor: FbankExtractor::new(features)?,
            encoder,
            decoder,
            adam,
            epoch: 0,
            best_dev_loss: f64::INFINITY,
            best_val: None,
            dev_history: Vec::new(),
            vocab,
        })
    }

    pub fn lr(&self) -> f64 {
        self.adam.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.lr = lr;
    }

    pub fn extractor(&self) -> &FbankExtractor {
        &self.extractor
    }

    /// Encoder parameters followed by decoder parameters (the Adam order).
    pub fn params(&self) -> Vec<&Parameter<f32>> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v
    }

    /// Inference model built from the current encoder.
    pub fn model(&self) -> Result<EmbeddingModel, TrainError> {
        Ok(EmbeddingModel::new(self.extractor.config(), self.encoder.clone())?)
    }

    /// Encoder and decoder tensors plus the Adam moments.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(EmbeddingModel::config_block(self.extractor.config(), self.encoder.config()));
        self.encoder.write_tensors(&mut ck);
        self.decoder.write_tensors(&mut ck);
        ck.adam = Some(self.adam.clone());
        ck
    }

    /// Eval-mode embeddings `[N × D]` of every clip (no augmentation).
    pub fn embed_set(&self, set: &LabeledSet) -> Result<Tensor<f32>, TrainError> {
        let rows = par_map(&set.clips, self.cfg.workers, |c| -> Result<Vec<f32>, TrainError> {
            let feats = self.extractor.compute(c.samples())?;
            Ok(self.encoder.embed(feats.frames())?)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        Ok(Tensor::from_rows(&rows)?)
    }

    /// Decoder loss of the clean, eval-mode embeddings of `set`.
    pub fn eval_loss(&self, set: &LabeledSet) -> Result<f64, TrainError> {
        if set.is_empty() {
            return Err(TrainError::InvalidConfig("cannot evaluate the loss of an empty set".into()));
        }
        Ok(self.decoder.loss(&self.embed_set(set)?, &set.labels)? as f64)
    }

    /// Fraction of clips whose nearest decoder center (or top logit) is
    /// their own class; `None` for heads without class prototypes.
    pub fn nearest_center_accuracy(&self, set: &LabeledSet) -> Result<Option<f64>, TrainError> {
        let emb = self.embed_set(set)?;
        let mut correct = 0usize;
        for (i, &label) in set.labels.iter().enumerate() {
            match self.decoder.predict(emb.row(i)) {
                Some(p) => correct += usize::from(p == label),
                None => return Ok(None),
            }
        }
        Ok(Some(correct as f64 / set.len().max(1) as f64))
    }

    /// Train-mode forward pass and loss of one batch; parameter gradients
    /// are left accumulated. Non-finite embeddings yield a NaN loss.
    fn forward_backward(&mut self, batch: &Batch) -> Result<f64, TrainError> {
        let cache = self.encoder.forward_batch(&batch.features, BnMode::Train)?;
        let rows: Vec<Vec<f32>> = cache.samples().iter().map(|s| s.embedding().to_vec()).collect();
        let emb = Tensor::from_rows(&rows)?;
        if !emb.is_finite() {
            return Ok(f64::NAN);
        }
        let (loss, demb) = self.decoder.forward_backward(&emb, &batch.labels)?;
        let dembs: Vec<Vec<f32>> = (0..demb.rows()).map(|i| demb.row(i).to_vec()).collect();
        self.encoder.backward_batch(&cache, &dembs)?;
        Ok(loss as f64)
    }
}

/// One pass over `batches`: forward, decoder loss, backward, global-norm
/// clip and an Adam step per batch. Returns the mean batch loss.
pub fn train_epoch(
    state: &mut TrainState,
    batches: impl IntoIterator<Item = Result<Batch, TrainError>>,
) -> Result<f64, TrainError> {
    let epoch = state.epoch + 1;
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in batches {
        let batch = batch?;
        state.encoder.zero_grad();
        state.decoder.zero_grad();
        let loss = state.forward_backward(&batch)?;
        let sq: f64 = state
            .params()
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|&g| (g as f64) * (g as f64))
            .sum();
        if !loss.is_finite() || !sq.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: batch.index,
            });
        }
        let norm = sq.sqrt();
        let clip = state.cfg.clip_norm;
        if clip > 0.0 && norm > clip {
            let s = (clip / norm) as f32;
            for p in state.params_mut() {
                p.grad.scale(s);
            }
        }
        let mut params = state.encoder.params_mut();
        params.extend(state.decoder.params_mut());
        state.adam.step(&mut params)?;
        total += loss;
        count += 1;
    }
    state.epoch = epoch;
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}
