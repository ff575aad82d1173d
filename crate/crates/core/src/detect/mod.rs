//! Enrollment profiles, cosine matching and the sliding-window detector.

mod profile;
mod stream;

pub use profile::{enroll, score_query, EnrollmentProfile, Matcher, MIN_CLIP_MS, PROFILE_MAGIC, PROFILE_VERSION};
pub use stream::{
    apply_suppression, offline_oracle_detect, stream_detect, utterance_score, window_scores, write_events_tsv,
    StreamDetector, WindowScore, WindowScorer,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioError, SAMPLE_RATE};
use crate::encoder::{EncoderError, Fingerprint};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("cosine distance of a zero vector")]
    ZeroVector,
    #[error("enrollment needs exactly 3 clips, got {0}")]
    WrongClipCount(usize),
    #[error("enrollment clip {clip} is too short ({ms:.1} ms)")]
    TooShort { clip: usize, ms: f64 },
    #[error("profile was made by model {profile}, query model is {model}")]
    FingerprintMismatch { profile: Fingerprint, model: Fingerprint },
    #[error("stream of {samples} samples is shorter than one {window}-sample window")]
    StreamTooShort { samples: usize, window: usize },
    #[error("corrupt profile: {0}")]
    CorruptProfile(String),
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub window_s: f64,
    pub stride_s: f64,
    /// Maximum accepted cosine distance.
    pub threshold: f64,
    pub suppress_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_s: 1.0,
            stride_s: 0.1,
            threshold: 0.3,
            suppress_s: 2.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::InvalidConfig(m));
        if !(self.window_s > 0.0) || !self.window_s.is_finite() {
            return bad(format!("window_s must be positive, got {}", self.window_s));
        }
        if !(self.stride_s > 0.0 && self.stride_s < self.window_s) || self.hop_samples() == 0 {
            return bad(format!("stride_s must lie in (0, window_s), got {}", self.stride_s));
        }
        if !(self.suppress_s >= 0.0) || !self.suppress_s.is_finite() {
            return bad(format!("suppress_s must be non-negative, got {}", self.suppress_s));
        }
        if !self.threshold.is_finite() {
            return bad("threshold must be finite".into());
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.stride_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn suppress_samples(&self) -> usize {
        (self.suppress_s * SAMPLE_RATE as f64).round() as usize
    }

    /// Minimum window-index spacing between two events.
    pub fn suppress_windows(&self) -> usize {
        self.suppress_samples().div_ceil(self.hop_samples()).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvent {
    /// Window end in samples from stream start.
    pub end_sample: usize,
    pub distance: f64,
    pub keyword_id: String,
}

impl DetectionEvent {
    pub fn time_s(&self) -> f64 {
        self.end_sample as f64 / SAMPLE_RATE as f64
    }
}

/// `1 − a·b / (‖a‖‖b‖)` accumulated in `f64`, in `[0, 2]`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64, DetectError> {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(DetectError::ZeroVector);
    }
    Ok((1.0 - ab / (aa.sqrt() * bb.sqrt())).clamp(0.0, 2.0))
}
