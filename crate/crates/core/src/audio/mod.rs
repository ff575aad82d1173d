//! Audio loading, conditioning, noise augmentation and log-Mel features.

mod clip;
mod features;
mod wav;

pub use clip::{mix_noise, pad_or_reject, rms, AudioClip, NoisyClip};
pub use features::{deltas, fbank, FbankExtractor, FeatureConfig, FeatureMatrix};
pub use wav::{load_wav, read_wav, write_wav, write_wav_bytes};

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("not a RIFF/WAVE file")]
    NotWav,
    #[error("unsupported sample rate {0} Hz (only 16000 Hz is accepted)")]
    UnsupportedSampleRate(u32),
    #[error("unsupported channel count {0} (mono only)")]
    UnsupportedChannels(u16),
    #[error("unsupported sample format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("clip of {ms:.1} ms is shorter than the {min_ms} ms minimum")]
    TooShort { ms: f64, min_ms: f64 },
    #[error("noise ({noise} samples) is shorter than the clip ({clip} samples)")]
    NoiseTooShort { noise: usize, clip: usize },
    #[error("silent input: SNR is undefined")]
    SilentInput,
    #[error("clip has {samples} samples, fewer than one {window}-sample analysis window")]
    ClipTooShort { samples: usize, window: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("corrupt feature dump: {0}")]
    CorruptDump(String),
}
