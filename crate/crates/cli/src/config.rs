use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qbye_core::audio::FeatureConfig;
use qbye_core::detect::DetectorConfig;
use qbye_core::encoder::EncoderConfig;
use qbye_core::train::TrainConfig;
use qbye_core::util::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a command may need. `train.seed` and `train.workers` are
/// always derived from the top-level `seed` and `workers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub features: FeatureConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub detector: DetectorConfig,
    pub eval: EvalSection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            features: FeatureConfig::default(),
            encoder: EncoderConfig::small(),
            train: TrainConfig::default(),
            detector: DetectorConfig::default(),
            eval: EvalSection::default(),
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: String,
    pub fa_target: f64,
    /// Babble SNR for test positives; clean when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_snr_db: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: "test".into(),
            fa_target: 0.3,
            test_snr_db: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub babble: Option<PathBuf>,
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides in order and
    /// resolves derived fields.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                text.parse::<toml::Table>().with_context(|| format!("invalid TOML in {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        cfg.train.seed = derive_seed(cfg.seed, "train");
        cfg.train.workers = cfg.workers;
        cfg.features.validate()?;
        cfg.encoder.validate()?;
        cfg.detector.validate()?;
        Ok(cfg)
    }

    /// The resolved config without the derived `train.seed` and
    /// `train.workers` (a derived seed can exceed TOML's i64 range).
    pub fn to_toml(&self) -> String {
        let mut plain = self.clone();
        plain.train.seed = 0;
        let mut table = toml::Table::try_from(plain).expect("config serializes");
        if let Some(toml::Value::Table(train)) = table.get_mut("train") {
            train.remove("seed");
            train.remove("workers");
        }
        toml::to_string(&table).expect("config serializes")
    }

    /// SHA-256 of the resolved TOML.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// `a.b.c=value`; the value is parsed as a TOML literal, falling back to a
/// bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override `{spec}` is not of the form key=value");
    };
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override `{key}`: `{p}` is not a table"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let cfg = RunConfig::load(None, &["seed=7".into(), "detector.threshold=0.25".into(), "eval.split=dev".into()]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.detector.threshold, 0.25);
        assert_eq!(cfg.eval.split, "dev");
        assert_eq!(cfg.train.seed, derive_seed(7, "train"));
        let err = RunConfig::load(None, &["detector.bogus_key=1".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("bogus_key"));
    }

    #[test]
    fn resolved_config_round_trips_with_a_stable_hash() {
        let cfg = RunConfig::load(None, &["eval.test_snr_db=10".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, cfg.to_toml()).unwrap();
        let again = RunConfig::load(Some(&p), &[]).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_ne!(RunConfig::default().hash(), cfg.hash());
    }
}
