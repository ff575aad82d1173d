use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::losses::LossConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub plateau_factor: f64,
    pub lr_min: f64,
    /// Epochs without dev improvement before the learning rate drops.
    pub plateau_patience: usize,
    pub snr_range: [f64; 2],
    pub augment: bool,
    pub loss: LossConfig,
    pub seed: u64,
    pub max_epochs: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub vocab_size: usize,
    /// FA/hour operating point of the internal-val metric.
    pub val_fa_target: f64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr0: 1e-3,
            plateau_factor: 0.1,
            lr_min: 1e-5,
            plateau_patience: 1,
            snr_range: [5.0, 15.0],
            augment: true,
            loss: LossConfig::default(),
            seed: 0,
            max_epochs: 100,
            clip_norm: 5.0,
            vocab_size: 10_000,
            val_fa_target: 0.0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_min > 0.0 && self.lr_min < self.lr0) {
            return bad(format!("need 0 < lr_min < lr0, got lr_min {} and lr0 {}", self.lr_min, self.lr0));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be at least 1".into());
        }
        let [lo, hi] = self.snr_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("snr_range must be finite with low <= high, got [{lo}, {hi}]"));
        }
        if !(self.clip_norm >= 0.0) {
            return bad(format!("clip_norm must be non-negative, got {}", self.clip_norm));
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2".into());
        }
        if !(self.val_fa_target >= 0.0) {
            return bad(format!("val_fa_target must be non-negative, got {}", self.val_fa_target));
        }
        self.loss.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_bad_values_do_not() {
        TrainConfig::default().validate().unwrap();
        for cfg in [
            TrainConfig { lr_min: 1e-2, ..Default::default() },
            TrainConfig { snr_range: [15.0, 5.0], ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { plateau_factor: 1.0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(TrainError::InvalidConfig(_))));
        }
    }
}
