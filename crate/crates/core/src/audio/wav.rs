use std::fs::File;
use std::io::{self, BufReader, Cursor, Read, Seek};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, AudioError, SAMPLE_RATE};

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::FormatError(msg) if msg.contains("RIFF") || msg.contains("WAVE") => AudioError::NotWav,
        hound::Error::FormatError(msg) => AudioError::CorruptHeader(msg.to_string()),
        hound::Error::IoError(e) if matches!(e.kind(), io::ErrorKind::UnexpectedEof | io::ErrorKind::Other) => {
            AudioError::CorruptHeader(e.to_string())
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::Unsupported => AudioError::UnsupportedFormat("unsupported WAV encoding".into()),
        other => AudioError::CorruptHeader(other.to_string()),
    }
}

/// Reads 16-bit PCM mono 16 kHz WAV data, scaling samples by 1/32768.
pub fn read_wav<R: Read + Seek>(reader: R, source_id: &str) -> Result<AudioClip, AudioError> {
    let mut wav = WavReader::new(reader).map_err(map_hound)?;
    let spec = wav.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedSampleRate(spec.sample_rate));
    }
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedChannels(spec.channels));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = wav
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    AudioClip::new(samples, source_id)
}

pub fn load_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let f = File::open(path)?;
    read_wav(BufReader::new(f), &path.display().to_string())
}

fn to_i16(s: f32) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

/// Writes PCM16, saturating samples outside [-1, 1).
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), AudioError> {
    let mut w = WavWriter::create(path, spec()).map_err(map_hound)?;
    for &s in clip.samples() {
        w.write_sample(to_i16(s)).map_err(map_hound)?;
    }
    w.finalize().map_err(map_hound)
}

pub fn write_wav_bytes(clip: &AudioClip) -> Vec<u8> {
    let mut cur = Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut cur, spec()).expect("in-memory WAV writer");
        for &s in clip.samples() {
            w.write_sample(to_i16(s)).expect("in-memory write");
        }
        w.finalize().expect("in-memory finalize");
    }
    cur.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_with(spec: WavSpec, samples: &[i16]) -> Vec<u8> {
        let mut cur = Cursor::new(Vec::new());
        let mut w = WavWriter::new(&mut cur, spec).unwrap();
        for &s in samples {
            for _ in 0..spec.channels {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
        cur.into_inner()
    }

    #[test]
    fn zeros_and_scaling() {
        let bytes = wav_with(spec(), &vec![0; 16000]);
        let c = read_wav(Cursor::new(bytes), "z").unwrap();
        assert_eq!(c.len(), 16000);
        assert!(c.samples().iter().all(|&s| s == 0.0));

        let bytes = wav_with(spec(), &[-32768, 16384, 32767]);
        let c = read_wav(Cursor::new(bytes), "s").unwrap();
        assert_eq!(c.samples()[0], -1.0);
        assert_eq!(c.samples()[1], 0.5);
        assert_eq!(c.samples()[2], 32767.0 / 32768.0);
    }

    #[test]
    fn rejects_unsupported_input() {
        let s44 = WavSpec {
            sample_rate: 44100,
            ..spec()
        };
        let r = read_wav(Cursor::new(wav_with(s44, &[0; 100])), "x");
        assert!(matches!(r, Err(AudioError::UnsupportedSampleRate(44100))));

        let stereo = WavSpec { channels: 2, ..spec() };
        let r = read_wav(Cursor::new(wav_with(stereo, &[0; 100])), "x");
        assert!(matches!(r, Err(AudioError::UnsupportedChannels(2))));

        let r = read_wav(Cursor::new(b"hello world, not a wav file at all".to_vec()), "x");
        assert!(matches!(r, Err(AudioError::NotWav)));

        let good = wav_with(spec(), &[1; 100]);
        let r = read_wav(Cursor::new(good[..30].to_vec()), "x");
        assert!(matches!(r, Err(AudioError::CorruptHeader(_))), "{r:?}");
    }

    #[test]
    fn roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let clip = AudioClip::new(vec![0.25, -0.5, 0.0, 2.0], "a").unwrap();
        write_wav(&path, &clip).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.samples(), &[0.25, -0.5, 0.0, 32767.0 / 32768.0]);
        assert_eq!(write_wav_bytes(&clip), std::fs::read(&path).unwrap());
    }
}
