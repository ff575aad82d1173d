use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TrainConfig, TrainError};
use crate::audio::{mix_noise, pad_or_reject, AudioClip, FbankExtractor};
use crate::data::{DataError, DatasetManifest, Split};
use crate::detect::MIN_CLIP_MS;
use crate::nn::Tensor;
use crate::util::{derive_seed, par_map};

/// Clips padded to 1 s with their class ids.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub clips: Vec<AudioClip>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(clips: Vec<AudioClip>, labels: Vec<usize>) -> Result<Self, TrainError> {
        if clips.len() != labels.len() {
            return Err(TrainError::InvalidConfig(format!(
                "{} clips but {} labels",
                clips.len(),
                labels.len()
            )));
        }
        let clips = clips
            .into_iter()
            .map(|c| pad_or_reject(c, 1.0, MIN_CLIP_MS))
            .collect::<Result<_, _>>()?;
        Ok(Self { clips, labels })
    }

    /// Loads the in-vocabulary keyword clips of `split`.
    pub fn from_manifest(manifest: &DatasetManifest, split: Split, vocab: &[String]) -> Result<Self, TrainError> {
        let mut clips = Vec::new();
        let mut labels = Vec::new();
        for (e, label) in manifest.labeled(split, vocab) {
            let clip = pad_or_reject(e.load()?, 1.0, MIN_CLIP_MS).map_err(|source| DataError::Audio {
                path: e.path.clone(),
                source,
            })?;
            clips.push(clip);
            labels.push(label);
        }
        Ok(Self { clips, labels })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub index: usize,
    /// Indices into the [`LabeledSet`].
    pub members: Vec<usize>,
    pub features: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
}

/// Lazily featurized batches of one epoch.
pub struct Batches<'a> {
    set: &'a LabeledSet,
    extractor: &'a FbankExtractor,
    babble: Option<&'a AudioClip>,
    snr_range: [f64; 2],
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
    seed: u64,
    workers: usize,
}

impl Batches<'_> {
    pub fn len(&self) -> usize {
        self.order.len() / self.batch_size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn make(&self, index: usize) -> Result<Batch, TrainError> {
        let members = self.order[index * self.batch_size..(index + 1) * self.batch_size].to_vec();
        let features = par_map(&members, self.workers, |&i| -> Result<Tensor<f32>, TrainError> {
            let clip = &self.set.clips[i];
            let feats = match self.babble {
                Some(noise) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("augment/{i}")));
                    let [lo, hi] = self.snr_range;
                    let snr = if lo < hi { rng.gen_range(lo..hi) } else { lo };
                    let mixed = mix_noise(clip, noise, snr, rng.gen())?;
                    self.extractor.compute(mixed.clip.samples())?
                }
                None => self.extractor.compute(clip.samples())?,
            };
            Ok(feats.into_tensor())
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        let labels = members.iter().map(|&i| self.set.labels[i]).collect();
        Ok(Batch {
            index,
            members,
            features,
            labels,
        })
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch, TrainError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.len() {
            return None;
        }
        self.next += 1;
        Some(self.make(self.next - 1))
    }
}

/// Seeded shuffle into full batches; the trailing partial batch is dropped.
/// With augmentation on, every clip gets babble at an SNR drawn from
/// `cfg.snr_range`.
pub fn build_batches<'a>(
    set: &'a LabeledSet,
    extractor: &'a FbankExtractor,
    cfg: &TrainConfig,
    babble: Option<&'a AudioClip>,
    epoch_seed: u64,
) -> Result<Batches<'a>, TrainError> {
    if set.len() < cfg.batch_size.max(1) {
        return Err(TrainError::EmptyManifest {
            need: cfg.batch_size,
            found: set.len(),
        });
    }
    let babble = if cfg.augment {
        Some(babble.ok_or_else(|| TrainError::InvalidConfig("augmentation is on but no babble noise was given".into()))?)
    } else {
        None
    };
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, "shuffle")));
    Ok(Batches {
        set,
        extractor,
        babble,
        snr_range: cfg.snr_range,
        order,
        batch_size: cfg.batch_size,
        next: 0,
        seed: epoch_seed,
        workers: cfg.workers,
    })
}
