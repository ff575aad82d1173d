use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, AudioError, SAMPLE_RATE};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub mel_bins: usize,
    pub window_ms: f64,
    pub stride_ms: f64,
    pub delta_mode: bool,
    pub delta_window: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            mel_bins: 160,
            window_ms: 25.0,
            stride_ms: 12.0,
            delta_mode: false,
            delta_window: 9,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    /// 40 log-Mel bins with delta and double-delta appended.
    pub fn with_deltas_40() -> Self {
        Self {
            mel_bins: 40,
            delta_mode: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: &str| Err(AudioError::InvalidConfig(m.to_string()));
        if self.mel_bins == 0 {
            return bad("mel_bins must be at least 1");
        }
        if !(self.window_ms > 0.0 && self.stride_ms > 0.0) {
            return bad("window_ms and stride_ms must be positive");
        }
        if self.window_ms <= self.stride_ms {
            return bad("window_ms must exceed stride_ms");
        }
        if self.delta_window % 2 == 0 {
            return bad("delta_window must be odd");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        if self.window_samples() < 2 || self.hop_samples() < 1 {
            return bad("window and stride are too short for 16 kHz audio");
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.stride_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }

    pub fn feature_dim(&self) -> usize {
        if self.delta_mode {
            3 * self.mel_bins
        } else {
            self.mel_bins
        }
    }

    /// Frames produced for a clip of `samples` samples, or `None` if shorter
    /// than one window.
    pub fn frame_count(&self, samples: usize) -> Option<usize> {
        let w = self.window_samples();
        (samples >= w).then(|| 1 + (samples - w) / self.hop_samples())
    }
}

/// `[t × f]` feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Tensor<f32>);

const DUMP_MAGIC: &[u8; 4] = b"QBFE";
const DUMP_VERSION: u32 = 1;

impl FeatureMatrix {
    pub fn new(frames: Tensor<f32>) -> Result<Self, AudioError> {
        if frames.shape().len() != 2 || frames.rows() == 0 || frames.cols() == 0 {
            return Err(AudioError::InvalidClip(format!(
                "feature matrix must be a non-empty [t x f] matrix, got {:?}",
                frames.shape()
            )));
        }
        if !frames.is_finite() {
            return Err(AudioError::InvalidClip("feature matrix has non-finite entries".into()));
        }
        Ok(Self(frames))
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    pub fn t(&self) -> usize {
        self.0.rows()
    }

    pub fn f(&self) -> usize {
        self.0.cols()
    }

    pub fn write_dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_u32::<LE>(DUMP_VERSION)?;
        w.write_u32::<LE>(self.t() as u32)?;
        w.write_u32::<LE>(self.f() as u32)?;
        for &x in self.0.data() {
            w.write_f32::<LE>(x)?;
        }
        Ok(())
    }

    pub fn read_dump(r: &mut impl Read) -> Result<Self, AudioError> {
        let corrupt = |e: std::io::Error| AudioError::CorruptDump(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != DUMP_MAGIC {
            return Err(AudioError::CorruptDump("bad magic".into()));
        }
        let version = r.read_u32::<LE>().map_err(corrupt)?;
        if version != DUMP_VERSION {
            return Err(AudioError::CorruptDump(format!("unsupported version {version}")));
        }
        let t = r.read_u32::<LE>().map_err(corrupt)? as usize;
        let f = r.read_u32::<LE>().map_err(corrupt)? as usize;
        let mut data = vec![0f32; t * f];
        r.read_f32_into::<LE>(&mut data).map_err(corrupt)?;
        let frames = Tensor::from_vec(&[t, f], data).map_err(|e| AudioError::CorruptDump(e.to_string()))?;
        Self::new(frames)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

struct MelFilter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Precomputed window, FFT plan and filterbank for one [`FeatureConfig`].
#[derive(Clone)]
pub struct FbankExtractor {
    cfg: FeatureConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filters: Arc<Vec<MelFilter>>,
}

impl std::fmt::Debug for FbankExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbankExtractor").field("cfg", &self.cfg).finish()
    }
}

impl FbankExtractor {
    pub fn new(cfg: &FeatureConfig) -> Result<Self, AudioError> {
        cfg.validate()?;
        let w = cfg.window_samples();
        let n_fft = cfg.fft_size();
        let window = (0..w)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / w as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);

        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let m_hi = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..cfg.mel_bins + 2)
            .map(|i| mel_to_hz(m_hi * i as f64 / (cfg.mel_bins + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let filters = edges
            .windows(3)
            .map(|e| {
                let (lo, c, hi) = (e[0], e[1], e[2]);
                let mut first_bin = n_bins;
                let mut weights = Vec::new();
                for k in 0..n_bins {
                    let f = k as f64 * bin_hz;
                    let wgt = if f > lo && f <= c {
                        (f - lo) / (c - lo)
                    } else if f > c && f < hi {
                        (hi - f) / (hi - c)
                    } else {
                        0.0
                    };
                    if wgt > 0.0 {
                        if weights.is_empty() {
                            first_bin = k;
                        }
                        weights.resize(k - first_bin, 0.0);
                        weights.push(wgt);
                    }
                }
                MelFilter { first_bin, weights }
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            window,
            fft,
            filters: Arc::new(filters),
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Log-Mel frames of `samples`, with deltas appended when the config
    /// asks for them.
    pub fn compute(&self, samples: &[f32]) -> Result<FeatureMatrix, AudioError> {
        let w = self.cfg.window_samples();
        let hop = self.cfg.hop_samples();
        let t = self.cfg.frame_count(samples.len()).ok_or(AudioError::ClipTooShort {
            samples: samples.len(),
            window: w,
        })?;
        let n_fft = self.fft.len();
        let n_bins = n_fft / 2 + 1;
        let m = self.cfg.mel_bins;
        let floor = self.cfg.log_floor;
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0f64; n_bins];
        let mut out = Vec::with_capacity(t * m);
        for i in 0..t {
            let frame = &samples[i * hop..i * hop + w];
            for (b, (&s, &h)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(s as f64 * h, 0.0);
            }
            for b in buf[w..].iter_mut() {
                *b = Complex::new(0.0, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for filt in self.filters.iter() {
                let e: f64 = filt
                    .weights
                    .iter()
                    .zip(&power[filt.first_bin.min(n_bins)..])
                    .map(|(w, p)| w * p)
                    .sum();
                out.push(e.max(floor).ln() as f32);
            }
        }
        let feats = FeatureMatrix::new(Tensor::from_vec(&[t, m], out).expect("shape matches"))?;
        if self.cfg.delta_mode {
            Ok(deltas(&feats, self.cfg.delta_window))
        } else {
            Ok(feats)
        }
    }
}

pub fn fbank(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix, AudioError> {
    FbankExtractor::new(cfg)?.compute(clip.samples())
}

fn regression(x: &Tensor<f32>, half: usize) -> Tensor<f32> {
    let (t, f) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[t, f]);
    if half == 0 {
        return out;
    }
    let denom = 2.0 * (1..=half).map(|n| (n * n) as f64).sum::<f64>();
    for i in 0..t {
        let row = out.row_mut(i);
        for n in 1..=half {
            let ahead = x.row((i + n).min(t - 1));
            let behind = x.row(i.saturating_sub(n));
            for ((o, &a), &b) in row.iter_mut().zip(ahead).zip(behind) {
                *o += (n as f64 * (a as f64 - b as f64) / denom) as f32;
            }
        }
    }
    out
}

/// Appends regression deltas and double deltas: `[static | Δ | ΔΔ]`.
pub fn deltas(feats: &FeatureMatrix, window: usize) -> FeatureMatrix {
    let half = window.saturating_sub(1) / 2;
    let x = feats.frames();
    let d1 = regression(x, half);
    let d2 = regression(&d1, half);
    let (t, f) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(t * 3 * f);
    for i in 0..t {
        out.extend_from_slice(x.row(i));
        out.extend_from_slice(d1.row(i));
        out.extend_from_slice(d2.row(i));
    }
    FeatureMatrix(Tensor::from_vec(&[t, 3 * f], out).expect("shape matches"))
}
