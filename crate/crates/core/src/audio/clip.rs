use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AudioError, SAMPLE_RATE};

/// Mono 16 kHz PCM with a label naming where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    source_id: String,
}

impl AudioClip {
    /// Loaded audio lies in [-1, 1]. Mixtures built by [`mix_noise`] may
    /// exceed that range and are saturated only when written to disk.
    pub fn new(samples: Vec<f32>, source_id: impl Into<String>) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::InvalidClip("clip has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidClip(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Samples `start..end`, clamped to the clip.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self, AudioError> {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        Self::new(self.samples[start..end].to_vec(), self.source_id.clone())
    }
}

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let ss: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (ss / samples.len() as f64).sqrt()
}

/// Zero-pads clips shorter than `target_s` at the end; longer clips pass
/// through untouched. Clips under `min_ms` are rejected.
pub fn pad_or_reject(clip: AudioClip, target_s: f64, min_ms: f64) -> Result<AudioClip, AudioError> {
    let ms = clip.duration_s() * 1000.0;
    if ms < min_ms {
        return Err(AudioError::TooShort { ms, min_ms });
    }
    let target = (target_s * SAMPLE_RATE as f64).round() as usize;
    if clip.len() >= target {
        return Ok(clip);
    }
    let AudioClip { mut samples, source_id } = clip;
    samples.resize(target, 0.0);
    Ok(AudioClip { samples, source_id })
}

/// Result of [`mix_noise`] along with the gain and crop offset it used.
#[derive(Debug, Clone)]
pub struct NoisyClip {
    pub clip: AudioClip,
    pub gain: f64,
    pub noise_offset: usize,
}

/// Adds a seeded random crop of `noise` to `clip` at `snr_db`.
pub fn mix_noise(clip: &AudioClip, noise: &AudioClip, snr_db: f64, rng_seed: u64) -> Result<NoisyClip, AudioError> {
    if noise.len() < clip.len() {
        return Err(AudioError::NoiseTooShort {
            noise: noise.len(),
            clip: clip.len(),
        });
    }
    let rms_c = rms(clip.samples());
    if rms_c == 0.0 {
        return Err(AudioError::SilentInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let offset = rng.gen_range(0..=noise.len() - clip.len());
    let crop = &noise.samples()[offset..offset + clip.len()];
    let rms_n = rms(crop);
    if rms_n == 0.0 {
        return Err(AudioError::SilentInput);
    }
    let gain = rms_c / rms_n * 10f64.powf(-snr_db / 20.0);
    let samples = clip
        .samples()
        .iter()
        .zip(crop)
        .map(|(&c, &n)| (c as f64 + gain * n as f64) as f32)
        .collect();
    Ok(NoisyClip {
        clip: AudioClip::new(samples, clip.source_id())?,
        gain,
        noise_offset: offset,
    })
}
