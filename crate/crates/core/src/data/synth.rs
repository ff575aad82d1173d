//! Seeded tonal corpus standing in for segmented speech.
//!
//! A word is a fixed sequence of 3–5 two-tone segments drawn from a
//! log-spaced frequency grid. Speakers scale every frequency by a personal
//! pitch factor and apply their own gain. Negative streams are built from
//! off-grid tone pairs, chirps and random on-grid pairs, so they share the
//! acoustic vocabulary of the keywords without containing any keyword.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, DatasetManifest, ManifestEntry, Split, NEGATIVE_LABEL};
use crate::audio::{rms, write_wav, AudioClip, SAMPLE_RATE};
use crate::util::derive_seed;

const GRID_POINTS: usize = 24;
const GRID_LO_HZ: f64 = 300.0;
const GRID_HI_HZ: f64 = 3400.0;
const RAMP_S: f64 = 0.008;
const NOISE_FLOOR: f64 = 0.002;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub speakers: usize,
    pub seed: u64,
    /// Negative streams in the test split.
    pub negative_streams: usize,
    /// Negative streams in the internal-val split.
    pub val_negative_streams: usize,
    pub negative_stream_s: f64,
    pub babble_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            per_class: 10,
            speakers: 5,
            seed: 0,
            negative_streams: 30,
            val_negative_streams: 2,
            negative_stream_s: 60.0,
            babble_s: 20.0,
        }
    }
}

impl SynthConfig {
    pub fn split_of(&self, speaker: usize, utterance: usize) -> Split {
        let s = self.speakers;
        if s >= 2 && speaker == s - 1 {
            Split::Test
        } else if s >= 3 && speaker == s - 2 {
            Split::InternalVal
        } else if utterance % 5 == 4 {
            Split::Dev
        } else {
            Split::Train
        }
    }

    pub fn word(class: usize) -> String {
        format!("kw{class:02}")
    }
}

/// One tone-pair segment of a word; `weight` is its share of the voiced
/// duration.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecipe {
    pub freqs: [f64; 2],
    pub amps: [f64; 2],
    pub weight: f64,
}

fn grid(k: f64) -> f64 {
    GRID_LO_HZ * (GRID_HI_HZ / GRID_LO_HZ).powf(k / (GRID_POINTS - 1) as f64)
}

/// Segment recipes and base duration of every class. Frequencies are dealt
/// from reshuffled passes over the grid, so small vocabularies use disjoint
/// frequencies.
pub fn class_recipe(classes: usize, seed: u64) -> Vec<(Vec<SegmentRecipe>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "classes"));
    let mut pool: Vec<usize> = Vec::new();
    let mut draw = |rng: &mut ChaCha8Rng| {
        if pool.len() < 2 {
            pool = (0..GRID_POINTS).collect();
            pool.shuffle(rng);
        }
        (pool.pop().expect("refilled"), pool.pop().expect("refilled"))
    };
    let mut out: Vec<(Vec<SegmentRecipe>, f64)> = Vec::with_capacity(classes);
    while out.len() < classes {
        let n = rng.gen_range(3..=5);
        let segs: Vec<SegmentRecipe> = (0..n)
            .map(|_| {
                let (a, b) = draw(&mut rng);
                SegmentRecipe {
                    freqs: [grid(a as f64), grid(b as f64)],
                    amps: [rng.gen_range(0.5..1.0), rng.gen_range(0.2..0.8)],
                    weight: rng.gen_range(0.7..1.3),
                }
            })
            .collect();
        let base = rng.gen_range(0.7..1.1);
        if out.iter().all(|(o, _)| o.iter().map(|s| s.freqs).ne(segs.iter().map(|s| s.freqs))) {
            out.push((segs, base));
        }
    }
    out
}

fn speaker_traits(seed: u64, speaker: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("speaker/{speaker}")));
    (rng.gen_range(0.94..1.06), rng.gen_range(0.35..0.8))
}

/// Adds a ramped tone pair (or a linear chirp when `end` differs from
/// `start`) to `out[at..at + len]`.
fn add_tones(out: &mut [f64], at: usize, len: usize, start: [f64; 2], end: [f64; 2], amps: [f64; 2], rng: &mut impl Rng) {
    let sr = SAMPLE_RATE as f64;
    let ramp = ((RAMP_S * sr) as usize).min(len / 2).max(1);
    let phase0 = [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)];
    for k in 0..2 {
        let mut phase = phase0[k];
        for i in 0..len.min(out.len().saturating_sub(at)) {
            let frac = i as f64 / len as f64;
            let f = start[k] + (end[k] - start[k]) * frac;
            let env = if i < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
            } else if i >= len - ramp {
                0.5 - 0.5 * (std::f64::consts::PI * (len - 1 - i) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            out[at + i] += amps[k] * env * phase.sin();
            phase += TAU * f / sr;
        }
    }
}

fn finish(mut buf: Vec<f64>, rng: &mut impl Rng, id: String) -> AudioClip {
    for v in &mut buf {
        *v += NOISE_FLOOR * rng.gen_range(-1.0..1.0);
    }
    let samples = buf.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();
    AudioClip::new(samples, id).expect("synthetic clip is finite and non-empty")
}

/// Utterance `index` of `class` by `speaker`, 0.6–1.2 s long.
pub fn synth_utterance(cfg: &SynthConfig, class: usize, speaker: usize, index: usize) -> AudioClip {
    let recipes = class_recipe(cfg.classes, cfg.seed);
    utterance_from(&recipes[class], cfg.seed, class, speaker, index)
}

fn utterance_from(recipe: &(Vec<SegmentRecipe>, f64), seed: u64, class: usize, speaker: usize, index: usize) -> AudioClip {
    let (segs, base) = recipe;
    let (pitch, gain) = speaker_traits(seed, speaker);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("utt/{class}/{speaker}/{index}")));
    let sr = SAMPLE_RATE as f64;
    let dur = (base * rng.gen_range(0.9..1.1)).clamp(0.6, 1.2);
    let total = (dur * sr) as usize;
    let lead = (rng.gen_range(0.02..0.08) * sr) as usize;
    let tail = (rng.gen_range(0.02..0.08) * sr) as usize;
    let voiced = total - lead - tail;
    let wsum: f64 = segs.iter().map(|s| s.weight).sum();
    let p = pitch * rng.gen_range(0.99..1.01);
    let g = gain * rng.gen_range(0.9..1.1);
    let mut buf = vec![0.0; total];
    let mut at = lead;
    for s in segs {
        let len = ((s.weight / wsum) * voiced as f64) as usize;
        let f = [s.freqs[0] * p, s.freqs[1] * p];
        let norm = g / (s.amps[0] + s.amps[1]);
        add_tones(&mut buf, at, len, f, f, [s.amps[0] * norm, s.amps[1] * norm], &mut rng);
        at += len;
    }
    finish(buf, &mut rng, format!("{}/spk{speaker:02}/{index:03}", SynthConfig::word(class)))
}

fn pseudo_words(buf: &mut [f64], rng: &mut impl Rng) {
    let sr = SAMPLE_RATE as f64;
    let mut at = 0usize;
    while at < buf.len() {
        at += (rng.gen_range(0.1..0.6) * sr) as usize;
        let pitch = rng.gen_range(0.94..1.06);
        let gain = rng.gen_range(0.3..0.8);
        for _ in 0..rng.gen_range(2..=6) {
            if at >= buf.len() {
                break;
            }
            let len = (rng.gen_range(0.08..0.3) * sr) as usize;
            let amps = [rng.gen_range(0.5..1.0), rng.gen_range(0.2..0.8)];
            let norm = gain / (amps[0] + amps[1]);
            let amps = [amps[0] * norm, amps[1] * norm];
            let kind: f64 = rng.gen();
            let (start, end) = if kind < 0.4 {
                let a = grid(rng.gen_range(0..GRID_POINTS - 1) as f64 + 0.5) * pitch;
                let b = grid(rng.gen_range(0..GRID_POINTS - 1) as f64 + 0.5) * pitch;
                ([a, b], [a, b])
            } else if kind < 0.7 {
                let mut f = || rng.gen_range(GRID_LO_HZ..GRID_HI_HZ);
                ([f(), f()], [f(), f()])
            } else {
                let a = grid(rng.gen_range(0..GRID_POINTS) as f64) * pitch;
                let b = grid(rng.gen_range(0..GRID_POINTS) as f64) * pitch;
                ([a, b], [a, b])
            };
            add_tones(buf, at, len, start, end, amps, rng);
            at += len;
        }
    }
}

/// Keyword-free stream `index` of `split` (test or internal-val).
pub fn negative_stream(cfg: &SynthConfig, split: Split, index: usize) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("negative/{split}/{index}")));
    let mut buf = vec![0.0; (cfg.negative_stream_s * SAMPLE_RATE as f64) as usize];
    pseudo_words(&mut buf, &mut rng);
    finish(buf, &mut rng, format!("negative/{split}/{index:03}"))
}

/// Six overlapping pseudo-word tracks, scaled to RMS 0.1.
pub fn babble(cfg: &SynthConfig) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "babble"));
    let mut buf = vec![0.0; (cfg.babble_s * SAMPLE_RATE as f64) as usize];
    for _ in 0..6 {
        pseudo_words(&mut buf, &mut rng);
    }
    let r: f64 = (buf.iter().map(|v| v * v).sum::<f64>() / buf.len() as f64).sqrt();
    if r > 0.0 {
        for v in &mut buf {
            *v *= 0.1 / r;
        }
    }
    let clip = finish(buf, &mut rng, "babble".into());
    debug_assert!(rms(clip.samples()) > 0.0);
    clip
}

/// Writes `clips/`, `negatives/`, `babble.wav` and `manifest.tsv` under
/// `out_dir` and returns the manifest.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest, DataError> {
    if cfg.classes < 2 {
        return Err(DataError::Invalid(format!("need at least 2 classes, got {}", cfg.classes)));
    }
    if cfg.per_class == 0 || cfg.speakers == 0 {
        return Err(DataError::Invalid("per_class and speakers must be positive".into()));
    }
    if !(cfg.negative_stream_s >= 1.0 && cfg.babble_s >= 1.2) {
        return Err(DataError::Invalid("negative streams need ≥ 1 s and babble ≥ 1.2 s".into()));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    let audio = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Audio { path, source }
    };
    for sub in ["clips", "negatives"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(io(&d))?;
    }
    let recipes = class_recipe(cfg.classes, cfg.seed);
    let mut entries = Vec::new();
    for (c, recipe) in recipes.iter().enumerate() {
        for s in 0..cfg.speakers {
            for n in 0..cfg.per_class {
                let path = out_dir.join(format!("clips/{}_spk{s:02}_{n:03}.wav", SynthConfig::word(c)));
                write_wav(&path, &utterance_from(recipe, cfg.seed, c, s, n)).map_err(audio(&path))?;
                entries.push(ManifestEntry {
                    path,
                    word: SynthConfig::word(c),
                    speaker: format!("spk{s:02}"),
                    split: cfg.split_of(s, n),
                });
            }
        }
    }
    for (split, count) in [(Split::Test, cfg.negative_streams), (Split::InternalVal, cfg.val_negative_streams)] {
        for i in 0..count {
            let path = out_dir.join(format!("negatives/{split}_{i:03}.wav"));
            write_wav(&path, &negative_stream(cfg, split, i)).map_err(audio(&path))?;
            entries.push(ManifestEntry {
                path,
                word: NEGATIVE_LABEL.into(),
                speaker: "none".into(),
                split,
            });
        }
    }
    let path = out_dir.join("babble.wav");
    write_wav(&path, &babble(cfg)).map_err(audio(&path))?;

    let manifest = DatasetManifest { entries };
    let path = out_dir.join("manifest.tsv");
    let mut text = Vec::new();
    manifest.write_tsv(&mut text, out_dir).map_err(io(&path))?;
    fs::write(&path, text).map_err(io(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{fbank, FeatureConfig};

    fn small() -> SynthConfig {
        SynthConfig {
            classes: 2,
            per_class: 4,
            speakers: 3,
            seed: 11,
            negative_streams: 1,
            val_negative_streams: 1,
            negative_stream_s: 3.0,
            babble_s: 2.0,
        }
    }

    #[test]
    fn same_seed_writes_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = synth_dataset(&small(), a.path()).unwrap();
        synth_dataset(&small(), b.path()).unwrap();
        assert_eq!(ma.entries.len(), 2 * 4 * 3 + 2);
        for e in &ma.entries {
            let rel = e.path.strip_prefix(a.path()).unwrap();
            assert_eq!(fs::read(&e.path).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
        }
        for f in ["babble.wav", "manifest.tsv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
        let reloaded = DatasetManifest::load(&a.path().join("manifest.tsv")).unwrap();
        assert_eq!(reloaded, ma);
        let other = SynthConfig { seed: 12, ..small() };
        assert_ne!(synth_utterance(&other, 0, 0, 0), synth_utterance(&small(), 0, 0, 0));
    }

    #[test]
    fn single_class_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { classes: 1, ..small() };
        assert!(matches!(synth_dataset(&cfg, dir.path()), Err(DataError::Invalid(_))));
    }

    #[test]
    fn clips_and_splits_follow_the_layout() {
        let cfg = SynthConfig::default();
        for c in [0, 7, 19] {
            for s in 0..cfg.speakers {
                let d = synth_utterance(&cfg, c, s, 3).duration_s();
                assert!((0.6..=1.2).contains(&d), "{d}");
            }
        }
        let recipes = class_recipe(20, 0);
        assert!(recipes.iter().all(|(segs, _)| (3..=5).contains(&segs.len())));
        assert_eq!(cfg.split_of(4, 0), Split::Test);
        assert_eq!(cfg.split_of(3, 0), Split::InternalVal);
        assert_eq!(cfg.split_of(0, 4), Split::Dev);
        assert_eq!(cfg.split_of(2, 3), Split::Train);
        let neg = negative_stream(&cfg, Split::Test, 0);
        assert_eq!(neg.len(), 60 * SAMPLE_RATE as usize);
        assert!((rms(babble(&SynthConfig { babble_s: 2.0, ..cfg }).samples()) - 0.1).abs() < 0.01);
    }

    #[test]
    fn two_class_vocabulary_uses_disjoint_frequencies() {
        for seed in 0..20 {
            let r = class_recipe(2, seed);
            let f0: Vec<f64> = r[0].0.iter().flat_map(|s| s.freqs).collect();
            assert!(r[1].0.iter().flat_map(|s| s.freqs).all(|f| !f0.contains(&f)));
        }
    }

    #[test]
    fn nearest_neighbor_fbank_separates_two_classes() {
        let cfg = SynthConfig {
            speakers: 5,
            per_class: 6,
            ..small()
        };
        let fc = FeatureConfig {
            mel_bins: 40,
            ..FeatureConfig::default()
        };
        let mut pts: Vec<(Vec<f64>, usize, usize)> = Vec::new();
        for c in 0..2 {
            for s in 0..cfg.speakers {
                for n in 0..cfg.per_class {
                    let m = fbank(&synth_utterance(&cfg, c, s, n), &fc).unwrap();
                    let mut mean = vec![0.0; m.f()];
                    for t in 0..m.t() {
                        for (acc, &v) in mean.iter_mut().zip(m.frames().row(t)) {
                            *acc += v as f64 / m.t() as f64;
                        }
                    }
                    pts.push((mean, c, s));
                }
            }
        }
        // Leave-one-speaker-out 1-NN.
        let mut correct = 0;
        for (i, (x, c, s)) in pts.iter().enumerate() {
            let nn = pts
                .iter()
                .enumerate()
                .filter(|(j, p)| *j != i && p.2 != *s)
                .min_by(|a, b| {
                    let d = |p: &Vec<f64>| p.iter().zip(x).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
                    d(&a.1 .0).total_cmp(&d(&b.1 .0))
                })
                .unwrap();
            correct += usize::from(nn.1 .1 == *c);
        }
        let acc = correct as f64 / pts.len() as f64;
        assert!(acc >= 0.9, "1-NN accuracy {acc}");
    }
}
