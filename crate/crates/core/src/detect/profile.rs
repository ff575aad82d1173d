//! ```text
//! "QBPR" | version u32 | keyword_id: u32 len + UTF-8 | fingerprint [u8; 32]
//! 3 × (u32 len + f32 LE × len)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{cosine_distance, DetectError, WindowScorer};
use crate::audio::{pad_or_reject, AudioClip, AudioError};
use crate::encoder::{EmbeddingModel, EmbeddingVector, Fingerprint};

pub const PROFILE_MAGIC: &[u8; 4] = b"QBPR";
pub const PROFILE_VERSION: u32 = 1;

const ENROLLMENTS: usize = 3;
const NORM_TOL: f64 = 1e-4;

/// Shortest enrollment clip accepted, before padding to one second.
pub const MIN_CLIP_MS: f64 = 100.0;

/// Three enrolled embeddings of one keyword, bound to the producing model.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrollmentProfile {
    keyword_id: String,
    enrollments: Vec<EmbeddingVector>,
    fingerprint: Fingerprint,
}

impl EnrollmentProfile {
    pub fn new(
        keyword_id: impl Into<String>,
        enrollments: Vec<EmbeddingVector>,
        fingerprint: Fingerprint,
    ) -> Result<Self, DetectError> {
        if enrollments.len() != ENROLLMENTS {
            return Err(DetectError::WrongClipCount(enrollments.len()));
        }
        let dim = enrollments[0].len();
        for (i, e) in enrollments.iter().enumerate() {
            if e.len() != dim || e.is_empty() {
                return Err(DetectError::CorruptProfile(format!(
                    "enrollment {i} has {} dims, expected {dim}",
                    e.len()
                )));
            }
            if (e.norm() - 1.0).abs() > NORM_TOL {
                return Err(DetectError::CorruptProfile(format!(
                    "enrollment {i} is not unit norm ({})",
                    e.norm()
                )));
            }
        }
        Ok(Self {
            keyword_id: keyword_id.into(),
            enrollments,
            fingerprint,
        })
    }

    pub fn keyword_id(&self) -> &str {
        &self.keyword_id
    }

    pub fn enrollments(&self) -> &[EmbeddingVector] {
        &self.enrollments
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    /// Minimum cosine distance to the enrollments, without the fingerprint check.
    pub fn min_distance(&self, query: &[f32]) -> Result<f64, DetectError> {
        let mut best = f64::INFINITY;
        for e in &self.enrollments {
            best = best.min(cosine_distance(query, e.as_slice())?);
        }
        Ok(best)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(PROFILE_MAGIC)?;
        w.write_u32::<LE>(PROFILE_VERSION)?;
        w.write_u32::<LE>(self.keyword_id.len() as u32)?;
        w.write_all(self.keyword_id.as_bytes())?;
        w.write_all(&self.fingerprint.0)?;
        for e in &self.enrollments {
            w.write_u32::<LE>(e.len() as u32)?;
            for &v in e.as_slice() {
                w.write_f32::<LE>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, DetectError> {
        let corrupt = |e: std::io::Error| DetectError::CorruptProfile(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != PROFILE_MAGIC {
            return Err(DetectError::CorruptProfile("bad magic".into()));
        }
        let version = r.read_u32::<LE>().map_err(corrupt)?;
        if version != PROFILE_VERSION {
            return Err(DetectError::CorruptProfile(format!("unsupported version {version}")));
        }
        let len = r.read_u32::<LE>().map_err(corrupt)? as usize;
        if len > 1 << 16 {
            return Err(DetectError::CorruptProfile(format!("keyword id of {len} bytes")));
        }
        let mut id = vec![0u8; len];
        r.read_exact(&mut id).map_err(corrupt)?;
        let keyword_id =
            String::from_utf8(id).map_err(|_| DetectError::CorruptProfile("keyword id is not UTF-8".into()))?;
        let mut fp = [0u8; 32];
        r.read_exact(&mut fp).map_err(corrupt)?;
        let mut enrollments = Vec::with_capacity(ENROLLMENTS);
        for _ in 0..ENROLLMENTS {
            let n = r.read_u32::<LE>().map_err(corrupt)? as usize;
            if n > 1 << 20 {
                return Err(DetectError::CorruptProfile(format!("embedding of {n} values")));
            }
            let mut v = vec![0f32; n];
            r.read_f32_into::<LE>(&mut v).map_err(corrupt)?;
            enrollments.push(EmbeddingVector::new(v));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(DetectError::CorruptProfile(format!("{} trailing bytes", rest.len())));
        }
        Self::new(keyword_id, enrollments, Fingerprint(fp))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, DetectError> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, DetectError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Embeds exactly three clips in eval mode. Clips are padded to one second;
/// clips under 100 ms are rejected.
pub fn enroll(
    keyword_id: impl Into<String>,
    clips: &[AudioClip],
    model: &EmbeddingModel,
) -> Result<EnrollmentProfile, DetectError> {
    if clips.len() != ENROLLMENTS {
        return Err(DetectError::WrongClipCount(clips.len()));
    }
    let mut enrollments = Vec::with_capacity(ENROLLMENTS);
    for (i, clip) in clips.iter().enumerate() {
        let padded = match pad_or_reject(clip.clone(), 1.0, MIN_CLIP_MS) {
            Err(AudioError::TooShort { ms, .. }) => return Err(DetectError::TooShort { clip: i, ms }),
            other => other?,
        };
        enrollments.push(model.embed(&padded)?);
    }
    EnrollmentProfile::new(keyword_id, enrollments, model.fingerprint())
}

/// Minimum distance from `query` to the three enrollments.
pub fn score_query(
    query: &EmbeddingVector,
    model: Fingerprint,
    profile: &EnrollmentProfile,
) -> Result<f64, DetectError> {
    if model != profile.fingerprint {
        return Err(DetectError::FingerprintMismatch {
            profile: profile.fingerprint,
            model,
        });
    }
    profile.min_distance(query.as_slice())
}

/// A model paired with a profile it produced.
#[derive(Debug, Clone, Copy)]
pub struct Matcher<'a> {
    model: &'a EmbeddingModel,
    profile: &'a EnrollmentProfile,
}

impl<'a> Matcher<'a> {
    pub fn new(model: &'a EmbeddingModel, profile: &'a EnrollmentProfile) -> Result<Self, DetectError> {
        let fp = model.fingerprint();
        if fp != profile.fingerprint {
            return Err(DetectError::FingerprintMismatch {
                profile: profile.fingerprint,
                model: fp,
            });
        }
        Ok(Self { model, profile })
    }

    pub fn profile(&self) -> &EnrollmentProfile {
        self.profile
    }
}

impl WindowScorer for Matcher<'_> {
    fn score(&mut self, window: &[f32]) -> Result<f64, DetectError> {
        let e = self.model.embed_samples(window)?;
        self.profile.min_distance(e.as_slice())
    }
}
