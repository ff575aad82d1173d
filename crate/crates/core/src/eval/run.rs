use super::{EvalError, EvalRun};
use crate::audio::AudioClip;
use crate::detect::{enroll, DetectorConfig, EnrollmentProfile};
use crate::encoder::{EmbeddingModel, EmbeddingVector, EncoderError};
use crate::util::par_map;

/// Enrollment clips and held-out positives of one keyword (and speaker).
#[derive(Debug, Clone)]
pub struct KeywordGroup {
    pub keyword_id: String,
    pub enrollments: Vec<AudioClip>,
    pub positives: Vec<AudioClip>,
}

/// A query-by-example evaluation: keyword groups plus keyword-free streams.
#[derive(Debug, Clone, Default)]
pub struct QbyeEvalSet {
    pub groups: Vec<KeywordGroup>,
    pub negatives: Vec<AudioClip>,
}

impl QbyeEvalSet {
    pub fn negative_seconds(&self) -> f64 {
        self.negatives.iter().map(AudioClip::duration_s).sum()
    }
}

/// Eval-mode embeddings of every full window, in time order. Clips shorter
/// than one window are zero-padded to it.
pub fn embed_windows(
    model: &EmbeddingModel,
    samples: &[f32],
    det: &DetectorConfig,
    workers: usize,
) -> Result<Vec<EmbeddingVector>, EncoderError> {
    let (w, hop) = (det.window_samples(), det.hop_samples());
    let padded;
    let samples = if samples.len() < w {
        padded = [samples, &vec![0.0; w - samples.len()][..]].concat();
        &padded[..]
    } else {
        samples
    };
    let starts: Vec<usize> = (0..=(samples.len() - w) / hop).map(|k| k * hop).collect();
    par_map(&starts, workers, |&s| model.embed_samples(&samples[s..s + w]))
        .into_iter()
        .collect()
}

/// Enrolls every group, scores its positives as whole utterances, and scores
/// every negative stream against every profile. Negative windows are embedded
/// once and shared across profiles; negative hours are summed per profile.
pub fn score_eval_set(
    model: &EmbeddingModel,
    set: &QbyeEvalSet,
    det: &DetectorConfig,
    workers: usize,
) -> Result<EvalRun, EvalError> {
    det.validate()?;
    if set.groups.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let profiles: Vec<EnrollmentProfile> = set
        .groups
        .iter()
        .map(|g| enroll(g.keyword_id.clone(), &g.enrollments, model))
        .collect::<Result<_, _>>()?;

    let mut positives = Vec::new();
    for (g, p) in set.groups.iter().zip(&profiles) {
        for clip in &g.positives {
            let mut best = f64::INFINITY;
            for e in embed_windows(model, clip.samples(), det, workers)? {
                best = best.min(p.min_distance(e.as_slice())?);
            }
            positives.push(best);
        }
    }

    let mut negatives = Vec::new();
    for clip in &set.negatives {
        if clip.len() < det.window_samples() {
            return Err(crate::detect::DetectError::StreamTooShort {
                samples: clip.len(),
                window: det.window_samples(),
            }
            .into());
        }
        let embs = embed_windows(model, clip.samples(), det, workers)?;
        for p in &profiles {
            negatives.push(
                embs.iter()
                    .map(|e| p.min_distance(e.as_slice()))
                    .collect::<Result<Vec<f64>, _>>()?,
            );
        }
    }
    let hours = set.negative_seconds() * profiles.len() as f64 / 3600.0;
    EvalRun::new(positives, negatives, hours, det.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::FeatureConfig;
    use crate::detect::{window_scores, Matcher};
    use crate::encoder::{AggregatorKind, Encoder, EncoderConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> EmbeddingModel {
        let features = FeatureConfig {
            mel_bins: 16,
            ..FeatureConfig::default()
        };
        let cfg = EncoderConfig {
            input_dim: 16,
            gru_layers: 1,
            gru_hidden: 8,
            mhe_heads: 2,
            agg_heads: 2,
            aggregator: AggregatorKind::Nmha,
            ..EncoderConfig::small()
        };
        EmbeddingModel::new(&features, Encoder::new(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()).unwrap()
    }

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> AudioClip {
        AudioClip::new((0..n).map(|_| rng.gen_range(-0.3..0.3)).collect(), "n").unwrap()
    }

    #[test]
    fn shared_negative_embeddings_match_per_profile_scoring() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = QbyeEvalSet {
            groups: (0..2)
                .map(|g| KeywordGroup {
                    keyword_id: format!("k{g}"),
                    enrollments: (0..3).map(|_| noise(&mut rng, 12000)).collect(),
                    positives: vec![noise(&mut rng, 9000), noise(&mut rng, 20000)],
                })
                .collect(),
            negatives: vec![noise(&mut rng, 40000)],
        };
        let det = DetectorConfig::default();
        let run = score_eval_set(&m, &set, &det, 2).unwrap();
        assert_eq!(run.positives.len(), 4);
        assert_eq!(run.negatives.len(), 2);
        assert!((run.negative_hours - 2.0 * 2.5 / 3600.0).abs() < 1e-12);

        let p1 = enroll("k1", &set.groups[1].enrollments, &m).unwrap();
        let direct: Vec<f64> = window_scores(set.negatives[0].samples(), Matcher::new(&m, &p1).unwrap(), &det)
            .unwrap()
            .iter()
            .map(|s| s.distance)
            .collect();
        assert_eq!(run.negatives[1], direct);
        assert_eq!(run, score_eval_set(&m, &set, &det, 1).unwrap());
    }
}
