use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::kv::KvBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorKind {
    /// Multi-head attention over time with L2-normalized weight columns.
    Nmha,
    /// Same as `Nmha` with raw weight columns.
    Mha,
    /// Single query from the last state, tanh-activated projection.
    TanhAtt,
    /// Concatenation of the last `last_k` states.
    LastK,
    LastState,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 5] = [Self::Nmha, Self::Mha, Self::TanhAtt, Self::LastK, Self::LastState];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nmha => "nmha",
            Self::Mha => "mha",
            Self::TanhAtt => "tanh-att",
            Self::LastK => "last-k",
            Self::LastState => "last-state",
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown aggregator `{s}` (expected one of nmha, mha, tanh-att, last-k, last-state)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    /// Layer normalization after every GRU layer.
    pub layer_norm: bool,
    /// Multi-head self-attention between the GRU stack and the aggregator.
    pub mhe: bool,
    pub mhe_heads: usize,
    /// Defaults to `gru_hidden / mhe_heads`.
    pub mhe_head_dim: Option<usize>,
    pub aggregator: AggregatorKind,
    pub agg_heads: usize,
    pub last_k: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::small()
    }
}

impl EncoderConfig {
    /// 4 × 100 GRU, 20 × 5 MH-E, 15-head NMH-A.
    pub fn small() -> Self {
        Self {
            input_dim: 160,
            gru_layers: 4,
            gru_hidden: 100,
            layer_norm: false,
            mhe: true,
            mhe_heads: 20,
            mhe_head_dim: None,
            aggregator: AggregatorKind::Nmha,
            agg_heads: 15,
            last_k: 5,
        }
    }

    /// 6 × 120 GRU, 20 × 6 MH-E, 15-head NMH-A.
    pub fn large() -> Self {
        Self {
            gru_layers: 6,
            gru_hidden: 120,
            ..Self::small()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.mhe_head_dim.unwrap_or(self.gru_hidden / self.mhe_heads.max(1))
    }

    /// Width of the sequence entering the aggregator.
    pub fn agg_input_dim(&self) -> usize {
        if self.mhe {
            self.mhe_heads * self.head_dim()
        } else {
            self.gru_hidden
        }
    }

    pub fn embedding_dim(&self) -> usize {
        let np = self.agg_input_dim();
        match self.aggregator {
            AggregatorKind::Nmha | AggregatorKind::Mha => self.agg_heads * np,
            AggregatorKind::TanhAtt | AggregatorKind::LastState => np,
            AggregatorKind::LastK => self.last_k * np,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.input_dim == 0 || self.gru_hidden == 0 {
            return bad("input_dim and gru_hidden must be positive".into());
        }
        if self.gru_layers == 0 {
            return bad("gru_layers must be at least 1".into());
        }
        if self.mhe && (self.mhe_heads == 0 || self.head_dim() == 0) {
            return bad(format!(
                "MH-E needs at least one head of positive width (heads {}, head dim {})",
                self.mhe_heads,
                self.head_dim()
            ));
        }
        if matches!(self.aggregator, AggregatorKind::Nmha | AggregatorKind::Mha) && self.agg_heads == 0 {
            return bad("agg_heads must be at least 1".into());
        }
        if self.aggregator == AggregatorKind::LastK && self.last_k == 0 {
            return bad("last_k must be at least 1".into());
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KvBlock) {
        kv.set("encoder.input_dim", self.input_dim);
        kv.set("encoder.gru_layers", self.gru_layers);
        kv.set("encoder.gru_hidden", self.gru_hidden);
        kv.set("encoder.layer_norm", self.layer_norm);
        kv.set("encoder.mhe", self.mhe);
        kv.set("encoder.mhe_heads", self.mhe_heads);
        kv.set("encoder.mhe_head_dim", self.head_dim());
        kv.set("encoder.aggregator", self.aggregator);
        kv.set("encoder.agg_heads", self.agg_heads);
        kv.set("encoder.last_k", self.last_k);
    }

    pub fn from_kv(kv: &KvBlock) -> Result<Self, EncoderError> {
        let e = EncoderError::InvalidConfig;
        let cfg = Self {
            input_dim: kv.get("encoder.input_dim").map_err(e)?,
            gru_layers: kv.get("encoder.gru_layers").map_err(e)?,
            gru_hidden: kv.get("encoder.gru_hidden").map_err(e)?,
            layer_norm: kv.get("encoder.layer_norm").map_err(e)?,
            mhe: kv.get("encoder.mhe").map_err(e)?,
            mhe_heads: kv.get("encoder.mhe_heads").map_err(e)?,
            mhe_head_dim: Some(kv.get("encoder.mhe_head_dim").map_err(e)?),
            aggregator: kv.get("encoder.aggregator").map_err(e)?,
            agg_heads: kv.get("encoder.agg_heads").map_err(e)?,
            last_k: kv.get("encoder.last_k").map_err(e)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Trainable scalars per block, in pipeline order.
pub fn param_breakdown(cfg: &EncoderConfig) -> Vec<(String, usize)> {
    let n = cfg.gru_hidden;
    let mut out = vec![("batchnorm".to_string(), 2 * cfg.input_dim)];
    let mut inp = cfg.input_dim;
    for l in 0..cfg.gru_layers {
        out.push((format!("gru.{l}"), 3 * n * (inp + n) + 6 * n));
        if cfg.layer_norm {
            out.push((format!("layernorm.{l}"), 2 * n));
        }
        inp = n;
    }
    if cfg.mhe {
        out.push(("mhe".into(), 3 * cfg.mhe_heads * n * cfg.head_dim()));
    }
    let np = cfg.agg_input_dim();
    let agg = match cfg.aggregator {
        AggregatorKind::Nmha | AggregatorKind::Mha => np * cfg.agg_heads,
        AggregatorKind::TanhAtt => np * np + np + 2 * np * np,
        AggregatorKind::LastK | AggregatorKind::LastState => 0,
    };
    out.push((format!("aggregator.{}", cfg.aggregator), agg));
    out
}

pub fn param_count(cfg: &EncoderConfig) -> usize {
    param_breakdown(cfg).iter().map(|(_, c)| c).sum()
}
