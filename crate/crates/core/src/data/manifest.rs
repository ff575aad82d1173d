use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;
use crate::audio::{load_wav, mix_noise, AudioClip};
use crate::eval::{KeywordGroup, QbyeEvalSet};
use crate::util::derive_seed;

/// Word label of keyword-free streams (evaluation negatives).
pub const NEGATIVE_LABEL: &str = "<negative>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    InternalVal,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::InternalVal => "internal-val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "internal-val" => Ok(Split::InternalVal),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (expected train, dev, internal-val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub word: String,
    pub speaker: String,
    pub split: Split,
}

impl ManifestEntry {
    pub fn is_negative(&self) -> bool {
        self.word == NEGATIVE_LABEL
    }

    pub fn load(&self) -> Result<AudioClip, DataError> {
        load_wav(&self.path).map_err(|source| DataError::Audio {
            path: self.path.clone(),
            source,
        })
    }
}

/// `path<TAB>word<TAB>speaker<TAB>split` entries. Relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses manifest text; every referenced file must exist. Blank lines
    /// and `#` comments are skipped.
    pub fn parse(text: &str, base: &Path) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            let [path, word, speaker, split] = cols[..] else {
                return Err(DataError::Parse {
                    line,
                    msg: format!("expected 4 tab-separated columns, found {}", cols.len()),
                });
            };
            if word.is_empty() || speaker.is_empty() {
                return Err(DataError::Parse {
                    line,
                    msg: "empty word or speaker".into(),
                });
            }
            let split = split.parse().map_err(|msg| DataError::Parse { line, msg })?;
            let path = base.join(path);
            if !path.is_file() {
                return Err(DataError::MissingFile { line, path });
            }
            entries.push(ManifestEntry {
                path,
                word: word.to_string(),
                speaker: speaker.to_string(),
                split,
            });
        }
        Ok(Self { entries })
    }

    /// Writes entries with paths relative to `base` where possible.
    pub fn write_tsv(&self, w: &mut impl Write, base: &Path) -> std::io::Result<()> {
        for e in &self.entries {
            let p = e.path.strip_prefix(base).unwrap_or(&e.path);
            writeln!(w, "{}\t{}\t{}\t{}", p.display(), e.word, e.speaker, e.split)?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// The `vocab_size` most frequent training words (ties alphabetical),
    /// returned in sorted order so label ids are stable.
    pub fn vocab(&self, vocab_size: usize) -> Vec<String> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for e in self.split(Split::Train).filter(|e| !e.is_negative()) {
            *counts.entry(&e.word).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut vocab: Vec<String> = ranked.into_iter().take(vocab_size).map(|(w, _)| w.to_string()).collect();
        vocab.sort();
        vocab
    }

    /// Keyword entries of `split` whose word is in `vocab`, with label ids.
    pub fn labeled(&self, split: Split, vocab: &[String]) -> Vec<(&ManifestEntry, usize)> {
        self.split(split)
            .filter_map(|e| vocab.binary_search(&e.word).ok().map(|l| (e, l)))
            .collect()
    }
}

/// Groups the keyword clips of `split` by (word, speaker), draws 3 seeded
/// enrollments per group and keeps the rest as positives. Groups with fewer
/// than 4 clips are skipped. With `noise`, positives are mixed with a seeded
/// crop of it at the given SNR.
pub fn build_eval_set(
    manifest: &DatasetManifest,
    split: Split,
    seed: u64,
    noise: Option<(&AudioClip, f64)>,
) -> Result<QbyeEvalSet, DataError> {
    let mut by_group: BTreeMap<(&str, &str), Vec<&ManifestEntry>> = BTreeMap::new();
    let mut negatives = Vec::new();
    for e in manifest.split(split) {
        if e.is_negative() {
            negatives.push(e.load()?);
        } else {
            by_group.entry((&e.word, &e.speaker)).or_default().push(e);
        }
    }
    let mut groups = Vec::new();
    for ((word, speaker), mut members) in by_group {
        if members.len() < 4 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("enroll/{word}/{speaker}")));
        members.shuffle(&mut rng);
        let clips = members.iter().map(|e| e.load()).collect::<Result<Vec<_>, _>>()?;
        let mut positives = clips[3..].to_vec();
        if let Some((babble, snr_db)) = noise {
            for (k, clip) in positives.iter_mut().enumerate() {
                let s = derive_seed(seed, &format!("test-noise/{word}/{speaker}/{k}"));
                *clip = mix_noise(clip, babble, snr_db, s)
                    .map_err(|source| DataError::Audio {
                        path: members[3 + k].path.clone(),
                        source,
                    })?
                    .clip;
            }
        }
        groups.push(KeywordGroup {
            keyword_id: word.to_string(),
            enrollments: clips[..3].to_vec(),
            positives,
        });
    }
    if groups.is_empty() {
        return Err(DataError::EmptySplit(split));
    }
    Ok(QbyeEvalSet { groups, negatives })
}
