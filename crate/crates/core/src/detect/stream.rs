use std::io::Write;

use super::{DetectError, DetectionEvent, DetectorConfig};
use crate::audio::AudioClip;

/// Distance of one fixed-length window of raw audio.
pub trait WindowScorer {
    fn score(&mut self, window: &[f32]) -> Result<f64, DetectError>;
}

impl<F: FnMut(&[f32]) -> Result<f64, DetectError>> WindowScorer for F {
    fn score(&mut self, window: &[f32]) -> Result<f64, DetectError> {
        self(window)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowScore {
    pub end_sample: usize,
    pub distance: f64,
}

/// Incremental detector: push audio in arbitrary chunks, receive events as
/// soon as the window that triggers them is complete.
pub struct StreamDetector<S> {
    scorer: S,
    keyword_id: String,
    threshold: f64,
    window: usize,
    hop: usize,
    suppress: usize,
    buffer: Vec<f32>,
    /// Absolute sample index of `buffer[0]`.
    buffer_start: usize,
    next_end: usize,
    last_event: Option<usize>,
}

impl<S: WindowScorer> StreamDetector<S> {
    pub fn new(scorer: S, keyword_id: impl Into<String>, cfg: &DetectorConfig) -> Result<Self, DetectError> {
        cfg.validate()?;
        Ok(Self {
            scorer,
            keyword_id: keyword_id.into(),
            threshold: cfg.threshold,
            window: cfg.window_samples(),
            hop: cfg.hop_samples(),
            suppress: cfg.suppress_samples(),
            buffer: Vec::new(),
            buffer_start: 0,
            next_end: cfg.window_samples(),
            last_event: None,
        })
    }

    /// Samples consumed so far.
    pub fn position(&self) -> usize {
        self.buffer_start + self.buffer.len()
    }

    pub fn push(&mut self, samples: &[f32]) -> Result<Vec<DetectionEvent>, DetectError> {
        self.buffer.extend_from_slice(samples);
        let mut events = Vec::new();
        while self.next_end <= self.position() {
            let lo = self.next_end - self.window - self.buffer_start;
            let distance = self.scorer.score(&self.buffer[lo..lo + self.window])?;
            let end = self.next_end;
            if distance <= self.threshold && self.last_event.map_or(true, |t| end >= t + self.suppress) {
                self.last_event = Some(end);
                events.push(DetectionEvent {
                    end_sample: end,
                    distance,
                    keyword_id: self.keyword_id.clone(),
                });
            }
            self.next_end += self.hop;
        }
        // Keep only what the next window still needs.
        let keep_from = (self.next_end - self.window).max(self.buffer_start);
        let drop = (keep_from - self.buffer_start).min(self.buffer.len());
        self.buffer.drain(..drop);
        self.buffer_start += drop;
        Ok(events)
    }
}

fn check_length(audio: &AudioClip, cfg: &DetectorConfig) -> Result<(), DetectError> {
    cfg.validate()?;
    if audio.len() < cfg.window_samples() {
        return Err(DetectError::StreamTooShort {
            samples: audio.len(),
            window: cfg.window_samples(),
        });
    }
    Ok(())
}

/// Runs the streaming detector over a whole clip, fed one hop at a time.
pub fn stream_detect(
    audio: &AudioClip,
    scorer: impl WindowScorer,
    keyword_id: &str,
    cfg: &DetectorConfig,
) -> Result<Vec<DetectionEvent>, DetectError> {
    check_length(audio, cfg)?;
    let mut det = StreamDetector::new(scorer, keyword_id, cfg)?;
    let mut events = Vec::new();
    for chunk in audio.samples().chunks(cfg.hop_samples()) {
        events.extend(det.push(chunk)?);
    }
    Ok(events)
}

/// Scores of every full window aligned to the stream start, in time order.
/// The trailing partial window is not evaluated.
pub fn window_scores(
    audio: &[f32],
    mut scorer: impl WindowScorer,
    cfg: &DetectorConfig,
) -> Result<Vec<WindowScore>, DetectError> {
    cfg.validate()?;
    let (w, hop) = (cfg.window_samples(), cfg.hop_samples());
    let mut out = Vec::new();
    let mut end = w;
    while end <= audio.len() {
        out.push(WindowScore {
            end_sample: end,
            distance: scorer.score(&audio[end - w..end])?,
        });
        end += hop;
    }
    Ok(out)
}

/// Threshold plus suppression over precomputed window scores.
pub fn apply_suppression(
    scores: &[WindowScore],
    threshold: f64,
    suppress_samples: usize,
    keyword_id: &str,
) -> Vec<DetectionEvent> {
    let mut events: Vec<DetectionEvent> = Vec::new();
    for s in scores {
        let free = events.last().map_or(true, |e| s.end_sample >= e.end_sample + suppress_samples);
        if s.distance <= threshold && free {
            events.push(DetectionEvent {
                end_sample: s.end_sample,
                distance: s.distance,
                keyword_id: keyword_id.to_string(),
            });
        }
    }
    events
}

/// Two-pass reference for [`stream_detect`]: all window scores first, then
/// threshold and suppression.
pub fn offline_oracle_detect(
    audio: &AudioClip,
    scorer: impl WindowScorer,
    keyword_id: &str,
    cfg: &DetectorConfig,
) -> Result<Vec<DetectionEvent>, DetectError> {
    check_length(audio, cfg)?;
    let scores = window_scores(audio.samples(), scorer, cfg)?;
    Ok(apply_suppression(&scores, cfg.threshold, cfg.suppress_samples(), keyword_id))
}

/// Whole-utterance distance: minimum over the sliding windows, with clips
/// shorter than one window zero-padded to it.
pub fn utterance_score(audio: &[f32], scorer: impl WindowScorer, cfg: &DetectorConfig) -> Result<f64, DetectError> {
    let w = cfg.window_samples();
    let padded;
    let audio = if audio.len() < w {
        padded = [audio, &vec![0.0; w - audio.len()][..]].concat();
        &padded[..]
    } else {
        audio
    };
    Ok(window_scores(audio, scorer, cfg)?
        .iter()
        .map(|s| s.distance)
        .fold(f64::INFINITY, f64::min))
}

/// `time_s<TAB>distance<TAB>keyword_id` per event.
pub fn write_events_tsv(w: &mut impl Write, events: &[DetectionEvent]) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{:.3}\t{:.6}\t{}", e.time_s(), e.distance, e.keyword_id)?;
    }
    Ok(())
}
