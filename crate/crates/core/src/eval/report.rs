use std::fmt;
use std::io::Write;
use std::str::FromStr;

use super::{frr_at, roc, score_eval_set, EvalError, OperatingPoint, QbyeEvalSet};
use crate::detect::DetectorConfig;
use crate::encoder::{AggregatorKind, EmbeddingModel, EncoderConfig};
use crate::losses::{LossConfig, LossKind};

/// Component ablations, numbered as in the published ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    Softmax,
    NoMhe,
    Tanh,
    Mha,
    OneHead,
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [Self::Softmax, Self::NoMhe, Self::Tanh, Self::Mha, Self::OneHead, Self::Full];

    pub fn row(self) -> usize {
        Self::ALL.iter().position(|&v| v == self).expect("listed") + 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Softmax => "MH-E + NMH-A + Softmax",
            Self::NoMhe => "NMH-A + Softtriple",
            Self::Tanh => "MH-E + Tanh + Softtriple",
            Self::Mha => "MH-E + MH-A + Softtriple",
            Self::OneHead => "MH-E + NMH-A (1 head) + Softtriple",
            Self::Full => "MH-E + NMH-A + Softtriple",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Self::Softmax => "softmax",
            Self::NoMhe => "no-mhe",
            Self::Tanh => "tanh",
            Self::Mha => "mha",
            Self::OneHead => "one-head",
            Self::Full => "full",
        }
    }

    /// Published FRR (%) at 0.3 FA/h for the small and large profiles,
    /// printed for context only.
    pub fn reference_frr(self) -> (f64, f64) {
        match self {
            Self::Softmax => (13.91, 9.03),
            Self::NoMhe => (7.53, 6.04),
            Self::Tanh => (7.22, 7.99),
            Self::Mha => (7.51, 6.10),
            Self::OneHead => (7.03, 4.91),
            Self::Full => (5.28, 3.99),
        }
    }

    /// Derives the variant from the full model's configuration.
    pub fn apply(self, enc: &EncoderConfig, loss: &LossConfig) -> (EncoderConfig, LossConfig) {
        let full_enc = EncoderConfig {
            mhe: true,
            aggregator: AggregatorKind::Nmha,
            ..enc.clone()
        };
        let full_loss = LossConfig {
            kind: LossKind::Softtriple,
            ..loss.clone()
        };
        match self {
            Self::Softmax => (
                full_enc,
                LossConfig {
                    kind: LossKind::Softmax,
                    ..full_loss
                },
            ),
            Self::NoMhe => (EncoderConfig { mhe: false, ..full_enc }, full_loss),
            Self::Tanh => (
                EncoderConfig {
                    aggregator: AggregatorKind::TanhAtt,
                    ..full_enc
                },
                full_loss,
            ),
            Self::Mha => (
                EncoderConfig {
                    aggregator: AggregatorKind::Mha,
                    ..full_enc
                },
                full_loss,
            ),
            Self::OneHead => (EncoderConfig { agg_heads: 1, ..full_enc }, full_loss),
            Self::Full => (full_enc, full_loss),
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for AblationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.slug() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected softmax, no-mhe, tanh, mha, one-head or full)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub op: OperatingPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub fa_target: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// `row  model  frr_pct  fa_per_hour  threshold  qualified  ref_small  ref_large`;
    /// the reference columns are filled for names matching a known variant.
    pub fn write_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "row\tmodel\tfrr_pct_at_{}\tfa_per_hour\tthreshold\tqualified\tref_small\tref_large",
            self.fa_target
        )?;
        for (i, r) in self.rows.iter().enumerate() {
            let known = AblationVariant::ALL
                .into_iter()
                .find(|v| v.slug() == r.name || v.label() == r.name);
            let (row, refs) = match known {
                Some(v) => {
                    let (s, l) = v.reference_frr();
                    (v.row().to_string(), format!("{s:.2}\t{l:.2}"))
                }
                None => ((i + 1).to_string(), "-\t-".into()),
            };
            let label = known.map_or(r.name.as_str(), |v| v.label());
            writeln!(
                w,
                "{row}\t{label}\t{:.2}\t{:.4}\t{:.6}\t{}\t{refs}",
                100.0 * r.op.frr,
                r.op.fa_per_hour,
                r.op.threshold,
                r.op.qualified
            )?;
        }
        Ok(())
    }
}

/// FRR at `fa_target` FA/h for every named model on the same evaluation set.
pub fn ablation_report(
    variants: &[(String, &EmbeddingModel)],
    set: &QbyeEvalSet,
    det: &DetectorConfig,
    fa_target: f64,
    workers: usize,
) -> Result<AblationTable, EvalError> {
    if variants.len() < 2 {
        return Err(EvalError::InvalidInput(format!(
            "an ablation needs at least 2 variants, got {}",
            variants.len()
        )));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for (name, model) in variants {
        let run = score_eval_set(model, set, det, workers)?;
        rows.push(AblationRow {
            name: name.clone(),
            op: frr_at(&roc(&run)?, fa_target),
        });
    }
    Ok(AblationTable { fa_target, rows })
}
