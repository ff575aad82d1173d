use rand::Rng;

use super::attention::{l2_normalize, l2_normalize_bwd, Aggregator, AggregatorCache, Mhe, MheCache};
use super::{EncoderConfig, EncoderError};
use crate::nn::checkpoint::{Checkpoint, CheckpointError};
use crate::nn::{BatchNorm, BatchNormCache, BnMode, Gru, GruCache, LayerNorm, LayerNormCache};
use crate::nn::{Module, NumericError, Parameter, Scalar, Tensor};

/// The embedding network. Parameters are owned here; `backward_*` methods
/// accumulate into them.
#[derive(Clone, Debug)]
pub struct Encoder<F = f32> {
    cfg: EncoderConfig,
    pub bn: BatchNorm<F>,
    pub grus: Vec<Gru<F>>,
    pub lns: Vec<LayerNorm<F>>,
    pub mhe: Option<Mhe<F>>,
    pub agg: Aggregator<F>,
}

/// Everything one utterance's backward pass needs after batch norm.
#[derive(Clone, Debug)]
pub struct SampleCache<F> {
    gru: Vec<GruCache<F>>,
    ln: Vec<LayerNormCache<F>>,
    hidden: Tensor<F>,
    mhe: Option<MheCache<F>>,
    agg: AggregatorCache<F>,
    emb: Vec<F>,
    norm: F,
}

impl<F: Scalar> SampleCache<F> {
    /// Last GRU layer's `[t × n]` hidden sequence.
    pub fn hidden(&self) -> &Tensor<F> {
        &self.hidden
    }

    pub fn embedding(&self) -> &[F] {
        &self.emb
    }
}

#[derive(Clone, Debug)]
pub struct BatchCache<F> {
    bn: BatchNormCache<F>,
    samples: Vec<SampleCache<F>>,
}

impl<F: Scalar> BatchCache<F> {
    pub fn samples(&self) -> &[SampleCache<F>] {
        &self.samples
    }
}

impl<F: Scalar> Encoder<F> {
    pub fn new(cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let n = cfg.gru_hidden;
        let grus = (0..cfg.gru_layers)
            .map(|l| Gru::new(&format!("gru.{l}"), if l == 0 { cfg.input_dim } else { n }, n, rng))
            .collect();
        let lns = if cfg.layer_norm {
            (0..cfg.gru_layers).map(|l| LayerNorm::new(&format!("ln.{l}"), n)).collect()
        } else {
            Vec::new()
        };
        let mhe = cfg.mhe.then(|| Mhe::new("mhe", n, cfg.mhe_heads, cfg.head_dim(), rng));
        Ok(Self {
            cfg: cfg.clone(),
            bn: BatchNorm::new("bn", cfg.input_dim),
            grus,
            lns,
            mhe,
            agg: Aggregator::new(cfg, rng),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim()
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<(), NumericError> {
        if x.shape().len() != 2 || x.cols() != self.cfg.input_dim || x.rows() == 0 {
            return Err(NumericError::ShapeMismatch {
                op: "encode",
                expected: format!("[t × {}] features", self.cfg.input_dim),
                got: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    fn gru_stack(&self, xbn: &Tensor<F>) -> Result<(Tensor<F>, Vec<GruCache<F>>, Vec<LayerNormCache<F>>), NumericError> {
        let h0 = vec![F::zero(); self.cfg.gru_hidden];
        let mut gcs = Vec::with_capacity(self.grus.len());
        let mut lcs = Vec::with_capacity(self.lns.len());
        let mut cur = xbn.clone();
        for (l, gru) in self.grus.iter().enumerate() {
            let gc = gru.forward(&cur, &h0)?;
            cur = gc.output().clone();
            gcs.push(gc);
            if let Some(ln) = self.lns.get(l) {
                let (y, lc) = ln.forward(&cur)?;
                cur = y;
                lcs.push(lc);
            }
        }
        Ok((cur, gcs, lcs))
    }

    /// Everything after batch norm for one utterance.
    pub fn forward_sample(&self, xbn: &Tensor<F>) -> Result<SampleCache<F>, EncoderError> {
        let (hidden, gru, ln) = self.gru_stack(xbn)?;
        let (seq, mhe) = match &self.mhe {
            Some(m) => {
                let (y, c) = m.forward(&hidden)?;
                (y, Some(c))
            }
            None => (hidden.clone(), None),
        };
        let (raw, agg) = self.agg.forward(&seq)?;
        let (emb, norm) = l2_normalize(&raw);
        Ok(SampleCache {
            gru,
            ln,
            hidden,
            mhe,
            agg,
            emb,
            norm,
        })
    }

    /// Backward from the unit-norm embedding to the batch-normed input.
    pub fn backward_sample(&mut self, cache: &SampleCache<F>, demb: &[F]) -> Result<Tensor<F>, EncoderError> {
        let draw = l2_normalize_bwd(&cache.emb, cache.norm, demb);
        let dseq = self.agg.backward(&cache.agg, &draw)?;
        let mut dh = match (&mut self.mhe, &cache.mhe) {
            (Some(m), Some(c)) => m.backward(c, &dseq)?,
            _ => dseq,
        };
        for l in (0..self.grus.len()).rev() {
            if let (Some(ln), Some(lc)) = (self.lns.get_mut(l), cache.ln.get(l)) {
                dh = ln.backward(lc, &dh)?;
            }
            dh = self.grus[l].backward(&cache.gru[l], &dh)?.0;
        }
        Ok(dh)
    }

    /// Batch norm over the whole batch, then the per-utterance pipeline.
    pub fn forward_batch(&mut self, feats: &[Tensor<F>], mode: BnMode) -> Result<BatchCache<F>, EncoderError> {
        for x in feats {
            self.check_input(x)?;
        }
        let (xbn, bn) = self.bn.forward(feats, mode)?;
        let samples = xbn.iter().map(|x| self.forward_sample(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(BatchCache { bn, samples })
    }

    pub fn backward_batch(&mut self, cache: &BatchCache<F>, dembs: &[Vec<F>]) -> Result<(), EncoderError> {
        if dembs.len() != cache.samples.len() {
            return Err(NumericError::ShapeMismatch {
                op: "encoder_bwd",
                expected: format!("{} embedding gradients", cache.samples.len()),
                got: format!("{}", dembs.len()),
            }
            .into());
        }
        let dxbn = cache
            .samples
            .iter()
            .zip(dembs)
            .map(|(c, d)| self.backward_sample(c, d))
            .collect::<Result<Vec<_>, _>>()?;
        self.bn.backward(&cache.bn, &dxbn)?;
        Ok(())
    }

    /// Eval-mode hidden sequence of the last GRU layer.
    pub fn encode_hidden(&self, x: &Tensor<F>) -> Result<Tensor<F>, EncoderError> {
        self.check_input(x)?;
        let xbn = self.bn.forward_eval(x)?;
        Ok(self.gru_stack(&xbn)?.0)
    }

    /// Eval-mode unit-norm embedding.
    pub fn embed(&self, x: &Tensor<F>) -> Result<Vec<F>, EncoderError> {
        self.check_input(x)?;
        let xbn = self.bn.forward_eval(x)?;
        Ok(self.forward_sample(&xbn)?.emb)
    }

    pub fn cast<G: Scalar>(&self) -> Encoder<G> {
        Encoder {
            cfg: self.cfg.clone(),
            bn: self.bn.cast(),
            grus: self.grus.iter().map(Gru::cast).collect(),
            lns: self.lns.iter().map(LayerNorm::cast).collect(),
            mhe: self.mhe.as_ref().map(Mhe::cast),
            agg: self.agg.cast(),
        }
    }
}

impl Encoder<f32> {
    /// Adds every parameter plus the batch-norm running statistics.
    pub fn write_tensors(&self, ck: &mut Checkpoint) {
        for p in self.params() {
            ck.push(p.name.clone(), p.value.clone());
        }
        ck.push("bn.running_mean", self.bn.running_mean.clone());
        ck.push("bn.running_var", self.bn.running_var.clone());
    }

    pub fn read_tensors(cfg: &EncoderConfig, ck: &Checkpoint) -> Result<Self, EncoderError> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut enc = Self::new(cfg, &mut rng)?;
        for p in enc.params_mut() {
            let t = ck.require(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor `{}` has shape {:?}, config implies {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                ))
                .into());
            }
            p.value = t.clone();
        }
        for (name, dst) in [
            ("bn.running_mean", &mut enc.bn.running_mean),
            ("bn.running_var", &mut enc.bn.running_var),
        ] {
            let t = ck.require(name)?;
            if t.shape() != dst.shape() {
                return Err(CheckpointError::Corrupt(format!("tensor `{name}` has shape {:?}", t.shape())).into());
            }
            *dst = t.clone();
        }
        Ok(enc)
    }
}

impl<F: Scalar> Module<F> for Encoder<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut v = self.bn.params();
        for (l, g) in self.grus.iter().enumerate() {
            v.extend(g.params());
            if let Some(ln) = self.lns.get(l) {
                v.extend(ln.params());
            }
        }
        if let Some(m) = &self.mhe {
            v.extend(m.params());
        }
        v.extend(self.agg.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut v = self.bn.params_mut();
        let mut lns = self.lns.iter_mut();
        for g in self.grus.iter_mut() {
            v.extend(g.params_mut());
            if let Some(ln) = lns.next() {
                v.extend(ln.params_mut());
            }
        }
        if let Some(m) = &mut self.mhe {
            v.extend(m.params_mut());
        }
        v.extend(self.agg.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{param_count, AggregatorKind};
    use crate::nn::{dot, grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(kind: AggregatorKind, mhe: bool, layer_norm: bool) -> EncoderConfig {
        EncoderConfig {
            input_dim: 3,
            gru_layers: 2,
            gru_hidden: 4,
            layer_norm,
            mhe,
            mhe_heads: 2,
            mhe_head_dim: None,
            aggregator: kind,
            agg_heads: 2,
            last_k: 2,
        }
    }

    fn rand_seq(rng: &mut impl Rng, t: usize, f: usize) -> Tensor<f64> {
        Tensor::from_vec(&[t, f], (0..t * f).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn param_count_matches_module() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in AggregatorKind::ALL {
            for (mhe, ln) in [(true, false), (false, false), (true, true)] {
                let cfg = toy(kind, mhe, ln);
                let enc = Encoder::<f32>::new(&cfg, &mut rng).unwrap();
                assert_eq!(enc.num_params(), param_count(&cfg), "{kind} mhe={mhe} ln={ln}");
            }
        }
        let small = Encoder::<f32>::new(&EncoderConfig::small(), &mut rng).unwrap();
        assert_eq!(small.num_params(), 292_220);
    }

    #[test]
    fn shapes_and_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut enc = Encoder::<f64>::new(&toy(AggregatorKind::Nmha, true, false), &mut rng).unwrap();
        let x = rand_seq(&mut rng, 1, 3);
        assert_eq!(enc.encode_hidden(&x).unwrap().shape(), &[1, 4]);
        for g in &mut enc.grus {
            for p in g.params_mut() {
                p.value.fill(0.0);
            }
        }
        let x = rand_seq(&mut rng, 6, 3);
        assert!(enc.encode_hidden(&x).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(enc.encode_hidden(&rand_seq(&mut rng, 6, 5)).is_err());
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in AggregatorKind::ALL {
            let cfg = toy(kind, true, false);
            let enc = Encoder::<f32>::new(&cfg, &mut rng).unwrap();
            let x = rand_seq(&mut rng, 7, 3).cast::<f32>();
            let a = enc.embed(&x).unwrap();
            assert_eq!(a.len(), cfg.embedding_dim());
            let n: f32 = dot(&a, &a).sqrt();
            assert!((n - 1.0).abs() < 1e-6, "{kind}: {n}");
            assert_eq!(a, enc.embed(&x).unwrap());
        }
    }

    /// Batch of two sequences through the whole network with a random
    /// linear read-out, train-mode batch norm included.
    #[test]
    fn end_to_end_gradients() {
        for (i, kind) in AggregatorKind::ALL.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + i as u64);
            let cfg = toy(kind, i % 2 == 0, i == 2);
            let enc = Encoder::<f64>::new(&cfg, &mut rng).unwrap();
            let xs = vec![rand_seq(&mut rng, 5, 3), rand_seq(&mut rng, 4, 3)];
            let cs: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..cfg.embedding_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();

            let mut e = enc.clone();
            let cache = e.forward_batch(&xs, BnMode::Train).unwrap();
            e.backward_batch(&cache, &cs).unwrap();
            let analytic = e.param_grads();

            let mut values = enc.param_values();
            let loss = |v: &[Tensor<f64>]| {
                let mut m = enc.clone();
                m.set_param_values(v).unwrap();
                let c = m.forward_batch(&xs, BnMode::Train).unwrap();
                c.samples().iter().zip(&cs).map(|(s, c)| dot(s.embedding(), c)).sum::<f64>()
            };
            let opts = GradCheckOptions::float64_extrapolated();
            let r = grad_check(&mut values, &analytic, &opts, loss).unwrap();
            assert!(r.max_rel_error < 1e-3, "{kind}: {r:?}");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = toy(AggregatorKind::TanhAtt, true, true);
        let mut enc = Encoder::<f32>::new(&cfg, &mut rng).unwrap();
        enc.bn.running_mean.fill(0.5);
        let mut ck = Checkpoint::new("");
        enc.write_tensors(&mut ck);
        let back = Encoder::read_tensors(&cfg, &Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.param_values(), enc.param_values());
        assert_eq!(back.bn.running_mean, enc.bn.running_mean);
        let other = toy(AggregatorKind::Nmha, true, true);
        assert!(Encoder::read_tensors(&other, &ck).is_err());
    }
}
