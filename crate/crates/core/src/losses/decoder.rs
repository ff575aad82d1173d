use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mining::mine_with;
use super::{
    check_labels, levenshtein_str, softmax_ce, softtriple_loss, triplet_loss, ClassCenters, LossError, Triplet,
};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{dot, Linear, Module, Parameter, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Softtriple,
    Softmax,
    Triplet,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Softtriple => "softtriple",
            Self::Softmax => "softmax",
            Self::Triplet => "triplet",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::Softtriple, Self::Softmax, Self::Triplet]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown loss `{s}` (expected softtriple, softmax or triplet)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinerKind {
    /// Lowest-index positive and negative.
    None,
    BatchHard,
    Levenshtein,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub centers_per_class: usize,
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
    pub margin: f64,
    pub miner: MinerKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Softtriple,
            centers_per_class: 6,
            lambda: 70.0,
            delta: 0.04,
            gamma: 1.0,
            margin: 0.2,
            miner: MinerKind::BatchHard,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.kind == LossKind::Softtriple && self.centers_per_class == 0 {
            return Err(LossError::InvalidConfig("centers_per_class must be at least 1".into()));
        }
        if !(self.margin > 0.0) {
            return Err(LossError::InvalidConfig(format!("triplet margin must be positive, got {}", self.margin)));
        }
        if !(self.lambda > 0.0) || !(self.delta >= 0.0) || !(self.gamma > 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "need lambda > 0, delta >= 0, gamma > 0 (got {}, {}, {})",
                self.lambda, self.delta, self.gamma
            )));
        }
        Ok(())
    }
}

/// Training head on top of the embeddings. Dropped from inference models.
#[derive(Clone, Debug)]
pub enum Decoder<F = f32> {
    SoftTriple(ClassCenters<F>),
    /// Linear classification head `[D × C]` with bias.
    Softmax(Linear<F>),
    Triplet {
        margin: f64,
        miner: MinerKind,
        /// Word per class id, used by the Levenshtein miner.
        vocab: Vec<String>,
    },
}

impl<F: Scalar> Decoder<F> {
    pub fn new(cfg: &LossConfig, vocab: &[String], dim: usize, rng: &mut impl Rng) -> Result<Self, LossError> {
        cfg.validate()?;
        if vocab.len() < 2 {
            return Err(LossError::InvalidConfig(format!(
                "training needs at least 2 classes, got {}",
                vocab.len()
            )));
        }
        Ok(match cfg.kind {
            LossKind::Softtriple => {
                let mut c = ClassCenters::random(vocab.len(), cfg.centers_per_class, dim, rng)?;
                c.lambda = cfg.lambda;
                c.delta = cfg.delta;
                c.gamma = cfg.gamma;
                Self::SoftTriple(c)
            }
            LossKind::Softmax => Self::Softmax(Linear::new("decoder", dim, vocab.len(), true, rng)),
            LossKind::Triplet => Self::Triplet {
                margin: cfg.margin,
                miner: cfg.miner,
                vocab: vocab.to_vec(),
            },
        })
    }

    pub fn kind(&self) -> LossKind {
        match self {
            Self::SoftTriple(_) => LossKind::Softtriple,
            Self::Softmax(_) => LossKind::Softmax,
            Self::Triplet { .. } => LossKind::Triplet,
        }
    }

    pub fn mine(&self, emb: &Tensor<F>, labels: &[usize]) -> Result<Vec<Triplet>, LossError> {
        let Self::Triplet { miner, vocab, .. } = self else {
            return Ok(Vec::new());
        };
        check_labels(labels, emb.rows(), vocab.len())?;
        match miner {
            MinerKind::None => mine_with(emb, labels, |_, j| j as f64),
            MinerKind::BatchHard => mine_with(emb, labels, |i, j| {
                emb.row(i).iter().zip(emb.row(j)).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum()
            }),
            MinerKind::Levenshtein => mine_with(emb, labels, |i, j| {
                levenshtein_str(&vocab[labels[i]], &vocab[labels[j]]) as f64
            }),
        }
    }

    /// Mean loss of `emb: [B × D]`; accumulates parameter gradients and
    /// returns the gradient with respect to `emb`.
    pub fn forward_backward(&mut self, emb: &Tensor<F>, labels: &[usize]) -> Result<(F, Tensor<F>), LossError> {
        match self {
            Self::SoftTriple(c) => {
                let g = softtriple_loss(emb, labels, c)?;
                c.centers.grad.add_assign(&g.dcenters)?;
                Ok((g.loss, g.dx))
            }
            Self::Softmax(head) => {
                let logits = head.forward(emb)?;
                let g = softmax_ce(&logits, labels)?;
                Ok((g.loss, head.backward(emb, &g.dx)?))
            }
            Self::Triplet { margin, .. } => {
                let margin = F::c(*margin);
                let triplets = self.mine(emb, labels)?;
                let inv = F::one() / F::c(triplets.len() as f64);
                let mut loss = F::zero();
                let mut dx = emb.zeros_like();
                for t in &triplets {
                    let g = triplet_loss(emb.row(t.anchor), emb.row(t.positive), emb.row(t.negative), margin);
                    loss += g.loss * inv;
                    for (idx, d) in [(t.anchor, g.da), (t.positive, g.dp), (t.negative, g.dn)] {
                        for (o, v) in dx.row_mut(idx).iter_mut().zip(d) {
                            *o += v * inv;
                        }
                    }
                }
                Ok((loss, dx))
            }
        }
    }

    /// Loss without touching gradients.
    pub fn loss(&self, emb: &Tensor<F>, labels: &[usize]) -> Result<F, LossError> {
        Ok(self.clone().forward_backward(emb, labels)?.0)
    }

    /// Predicted class for one embedding (nearest center or argmax logit).
    pub fn predict(&self, x: &[F]) -> Option<usize> {
        match self {
            Self::SoftTriple(c) => Some(c.nearest_class(x)),
            Self::Softmax(head) => {
                let w = &head.weight.value;
                let scores = (0..w.cols()).map(|j| {
                    let col: Vec<F> = (0..w.rows()).map(|i| w.row(i)[j]).collect();
                    dot(x, &col) + head.bias.as_ref().map_or(F::zero(), |b| b.value.data()[j])
                });
                scores
                    .enumerate()
                    .fold(None, |best: Option<(usize, F)>, (j, s)| match best {
                        Some((_, b)) if b >= s => best,
                        _ => Some((j, s)),
                    })
                    .map(|(j, _)| j)
            }
            Self::Triplet { .. } => None,
        }
    }

    pub fn cast<G: Scalar>(&self) -> Decoder<G> {
        match self {
            Self::SoftTriple(c) => Decoder::SoftTriple(c.cast()),
            Self::Softmax(l) => Decoder::Softmax(l.cast()),
            Self::Triplet { margin, miner, vocab } => Decoder::Triplet {
                margin: *margin,
                miner: *miner,
                vocab: vocab.clone(),
            },
        }
    }
}

impl Decoder<f32> {
    pub fn write_tensors(&self, ck: &mut Checkpoint) {
        for p in self.params() {
            ck.push(p.name.clone(), p.value.clone());
        }
    }

    /// Restores parameters written by [`Decoder::write_tensors`] into a
    /// decoder of matching shape.
    pub fn read_tensors(&mut self, ck: &Checkpoint) -> Result<(), LossError> {
        for p in self.params_mut() {
            let t = ck.require(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(LossError::InvalidConfig(format!(
                    "checkpoint tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

impl<F: Scalar> Module<F> for Decoder<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        match self {
            Self::SoftTriple(c) => c.params(),
            Self::Softmax(l) => l.params(),
            Self::Triplet { .. } => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        match self {
            Self::SoftTriple(c) => c.params_mut(),
            Self::Softmax(l) => l.params_mut(),
            Self::Triplet { .. } => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::l2_normalize;
    use crate::nn::{grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vec<String> {
        ["cat", "car", "dog"].iter().map(|s| s.to_string()).collect()
    }

    fn batch(rng: &mut ChaCha8Rng) -> (Tensor<f64>, Vec<usize>) {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| l2_normalize(&(0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).0)
            .collect();
        (Tensor::from_rows(&rows).unwrap(), vec![0, 1, 2, 0, 1, 2])
    }

    #[test]
    fn every_kind_backpropagates() {
        for kind in [LossKind::Softtriple, LossKind::Softmax, LossKind::Triplet] {
            for miner in [MinerKind::None, MinerKind::BatchHard, MinerKind::Levenshtein] {
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                let cfg = LossConfig {
                    kind,
                    miner,
                    centers_per_class: 2,
                    lambda: 5.0,
                    margin: 1.5,
                    ..LossConfig::default()
                };
                let mut dec = Decoder::<f64>::new(&cfg, &vocab(), 4, &mut rng).unwrap();
                let (x, labels) = batch(&mut rng);
                dec.zero_grad();
                let (loss, dx) = dec.forward_backward(&x, &labels).unwrap();
                assert!(loss > 0.0, "{kind}");
                let mut analytic = vec![dx];
                analytic.extend(dec.param_grads());
                let mut values = vec![x.clone()];
                values.extend(dec.param_values());
                // Raw inputs are fine for the heads that do not check norms.
                let opts = GradCheckOptions::float64();
                let r = grad_check(&mut values[1..], &analytic[1..], &opts, |v| {
                    let mut d = dec.clone();
                    d.set_param_values(v).unwrap();
                    d.loss(&x, &labels).unwrap()
                })
                .unwrap();
                assert!(r.max_rel_error < 1e-5, "{kind}: {r:?}");
                if kind != LossKind::Softtriple {
                    let r = grad_check(&mut values[..1], &analytic[..1], &opts, |v| dec.loss(&v[0], &labels).unwrap())
                        .unwrap();
                    assert!(r.max_rel_error < 1e-5, "{kind}: {r:?}");
                }
                if kind != LossKind::Triplet {
                    break;
                }
            }
        }
    }

    #[test]
    fn single_class_is_rejected_and_predictions_work() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(Decoder::<f32>::new(&LossConfig::default(), &vocab()[..1], 4, &mut rng).is_err());
        let dec = Decoder::<f64>::new(&LossConfig::default(), &vocab(), 4, &mut rng).unwrap();
        let Decoder::SoftTriple(c) = &dec else { unreachable!() };
        let center: Vec<f64> = l2_normalize(&c.centers.value.data()[2 * 6 * 4..2 * 6 * 4 + 4]).0;
        assert_eq!(dec.predict(&center), Some(2));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dec = Decoder::<f32>::new(&LossConfig::default(), &vocab(), 4, &mut rng).unwrap();
        let mut ck = Checkpoint::new("");
        dec.write_tensors(&mut ck);
        assert_eq!(ck.require("decoder.centers").unwrap().shape(), &[3, 6, 4]);
        let mut other = Decoder::<f32>::new(&LossConfig::default(), &vocab(), 4, &mut rng).unwrap();
        other.read_tensors(&ck).unwrap();
        assert_eq!(other.param_values(), dec.param_values());
    }
}
