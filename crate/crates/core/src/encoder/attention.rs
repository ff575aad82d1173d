use rand::Rng;

use super::{AggregatorKind, EncoderConfig, EncoderError};
use crate::nn::{axpy, dot, gemm_nn, gemm_nt, gemm_tn, softmax_bwd_in_place, softmax_in_place};
use crate::nn::{Module, NumericError, Parameter, Scalar, Tensor};

fn head_block<F: Scalar>(m: &Tensor<F>, j: usize, d: usize) -> Tensor<F> {
    let t = m.rows();
    let mut out = Tensor::zeros(&[t, d]);
    for i in 0..t {
        out.row_mut(i).copy_from_slice(&m.row(i)[j * d..(j + 1) * d]);
    }
    out
}

fn add_head_block<F: Scalar>(dst: &mut Tensor<F>, j: usize, d: usize, src: &Tensor<F>) {
    for i in 0..src.rows() {
        for (a, &b) in dst.row_mut(i)[j * d..(j + 1) * d].iter_mut().zip(src.row(i)) {
            *a += b;
        }
    }
}

fn expect_cols<F: Scalar>(op: &'static str, x: &Tensor<F>, cols: usize) -> Result<(), NumericError> {
    if x.shape().len() != 2 || x.cols() != cols || x.rows() == 0 {
        return Err(NumericError::ShapeMismatch {
            op,
            expected: format!("[t × {cols}] with t ≥ 1"),
            got: format!("{:?}", x.shape()),
        });
    }
    Ok(())
}

/// Multi-head scaled dot-product self-attention without positional
/// encoding, output projection or biases. `W^q`, `W^k`, `W^v` pack all heads
/// along their columns: head `j` owns columns `j·d .. (j+1)·d`.
#[derive(Clone, Debug)]
pub struct Mhe<F = f32> {
    pub wq: Parameter<F>,
    pub wk: Parameter<F>,
    pub wv: Parameter<F>,
    heads: usize,
    head_dim: usize,
}

#[derive(Clone, Debug)]
pub struct MheCache<F> {
    h: Tensor<F>,
    q: Vec<Tensor<F>>,
    k: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    attn: Vec<Tensor<F>>,
}

impl<F: Scalar> MheCache<F> {
    /// Per-head `[t × t]` attention matrices (rows over keys).
    pub fn attention(&self) -> &[Tensor<F>] {
        &self.attn
    }
}

impl<F: Scalar> Mhe<F> {
    pub fn new(prefix: &str, input: usize, heads: usize, head_dim: usize, rng: &mut impl Rng) -> Self {
        let shape = [input, heads * head_dim];
        Self {
            wq: Parameter::uniform(format!("{prefix}.wq"), &shape, input, rng),
            wk: Parameter::uniform(format!("{prefix}.wk"), &shape, input, rng),
            wv: Parameter::uniform(format!("{prefix}.wv"), &shape, input, rng),
            heads,
            head_dim,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn input_dim(&self) -> usize {
        self.wq.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    fn scale(&self) -> F {
        F::c(1.0 / (self.head_dim as f64).sqrt())
    }

    pub fn forward(&self, h: &Tensor<F>) -> Result<(Tensor<F>, MheCache<F>), NumericError> {
        expect_cols("mhe_fwd", h, self.input_dim())?;
        let (t, d) = (h.rows(), self.head_dim);
        let qa = h.matmul(&self.wq.value)?;
        let ka = h.matmul(&self.wk.value)?;
        let va = h.matmul(&self.wv.value)?;
        let mut out = Tensor::zeros(&[t, self.output_dim()]);
        let mut cache = MheCache {
            h: h.clone(),
            q: Vec::with_capacity(self.heads),
            k: Vec::with_capacity(self.heads),
            v: Vec::with_capacity(self.heads),
            attn: Vec::with_capacity(self.heads),
        };
        for j in 0..self.heads {
            let (q, k, v) = (head_block(&qa, j, d), head_block(&ka, j, d), head_block(&va, j, d));
            let mut s = q.matmul_nt(&k)?;
            s.scale(self.scale());
            for i in 0..t {
                softmax_in_place(s.row_mut(i));
            }
            add_head_block(&mut out, j, d, &s.matmul(&v)?);
            cache.q.push(q);
            cache.k.push(k);
            cache.v.push(v);
            cache.attn.push(s);
        }
        Ok((out, cache))
    }

    /// Accumulates weight gradients and returns the gradient w.r.t. `h`.
    pub fn backward(&mut self, cache: &MheCache<F>, dy: &Tensor<F>) -> Result<Tensor<F>, NumericError> {
        let t = cache.h.rows();
        if dy.shape() != [t, self.output_dim()] {
            return Err(NumericError::ShapeMismatch {
                op: "mhe_bwd",
                expected: format!("[{t} × {}]", self.output_dim()),
                got: format!("{:?}", dy.shape()),
            });
        }
        let d = self.head_dim;
        let mut dq = Tensor::zeros(&[t, self.output_dim()]);
        let mut dk = dq.clone();
        let mut dv = dq.clone();
        for j in 0..self.heads {
            let dx = head_block(dy, j, d);
            let attn = &cache.attn[j];
            let mut ds = dx.matmul_nt(&cache.v[j])?;
            add_head_block(&mut dv, j, d, &attn.matmul_tn(&dx)?);
            for i in 0..t {
                softmax_bwd_in_place(attn.row(i), ds.row_mut(i));
            }
            ds.scale(self.scale());
            add_head_block(&mut dq, j, d, &ds.matmul(&cache.k[j])?);
            add_head_block(&mut dk, j, d, &ds.matmul_tn(&cache.q[j])?);
        }
        self.wq.grad.add_assign(&cache.h.matmul_tn(&dq)?)?;
        self.wk.grad.add_assign(&cache.h.matmul_tn(&dk)?)?;
        self.wv.grad.add_assign(&cache.h.matmul_tn(&dv)?)?;
        let mut dh = dq.matmul_nt(&self.wq.value)?;
        dh.add_assign(&dk.matmul_nt(&self.wk.value)?)?;
        dh.add_assign(&dv.matmul_nt(&self.wv.value)?)?;
        Ok(dh)
    }

    pub fn cast<G: Scalar>(&self) -> Mhe<G> {
        Mhe {
            wq: self.wq.cast(),
            wk: self.wk.cast(),
            wv: self.wv.cast(),
            heads: self.heads,
            head_dim: self.head_dim,
        }
    }
}

impl<F: Scalar> Module<F> for Mhe<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.wq, &self.wk, &self.wv]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.wq, &mut self.wk, &mut self.wv]
    }
}

/// Multi-head attention pooling over time. Column `j` of `W` scores every
/// frame for head `j`; a softmax over time turns the scores into weights and
/// head `j` emits the weighted sum of frames. With `normalize` set, each
/// column is divided by its L2 norm at every forward pass (NMH-A); without
/// it the raw columns are used (MH-A).
#[derive(Clone, Debug)]
pub struct HeadAggregator<F = f32> {
    pub w: Parameter<F>,
    pub normalize: bool,
}

#[derive(Clone, Debug)]
pub struct HeadCache<F> {
    x: Tensor<F>,
    wstar: Tensor<F>,
    norms: Vec<F>,
    q: Tensor<F>,
}

impl<F: Scalar> HeadCache<F> {
    /// Attention weights `[t × m_a]`; each column sums to one.
    pub fn weights(&self) -> &Tensor<F> {
        &self.q
    }
}

impl<F: Scalar> HeadAggregator<F> {
    pub fn new(prefix: &str, input: usize, heads: usize, normalize: bool, rng: &mut impl Rng) -> Self {
        Self {
            w: Parameter::uniform(format!("{prefix}.w"), &[input, heads], input, rng),
            normalize,
        }
    }

    pub fn heads(&self) -> usize {
        self.w.value.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.rows()
    }

    /// The weight actually used in the exponent, with per-column norms.
    pub fn effective_weight(&self) -> Result<(Tensor<F>, Vec<F>), EncoderError> {
        let (np, m) = (self.input_dim(), self.heads());
        let w = &self.w.value;
        if !self.normalize {
            return Ok((w.clone(), vec![F::one(); m]));
        }
        let mut ws = w.clone();
        let mut norms = Vec::with_capacity(m);
        for j in 0..m {
            let norm = (0..np).map(|i| w.data()[i * m + j].powi(2)).sum::<F>().sqrt();
            if norm == F::zero() {
                return Err(EncoderError::ZeroWeightColumn { head: j });
            }
            for i in 0..np {
                ws.data_mut()[i * m + j] /= norm;
            }
            norms.push(norm);
        }
        Ok((ws, norms))
    }

    /// Returns the concatenation `v_1 … v_{m_a}` of length `m_a · n'`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<(Vec<F>, HeadCache<F>), EncoderError> {
        expect_cols("aggregator_fwd", x, self.input_dim())?;
        let (t, m) = (x.rows(), self.heads());
        let (wstar, norms) = self.effective_weight()?;
        let mut q = x.matmul(&wstar)?;
        let mut col = vec![F::zero(); t];
        for j in 0..m {
            for i in 0..t {
                col[i] = q.data()[i * m + j];
            }
            softmax_in_place(&mut col);
            for i in 0..t {
                q.data_mut()[i * m + j] = col[i];
            }
        }
        let v = q.matmul_tn(x)?;
        Ok((
            v.into_data(),
            HeadCache {
                x: x.clone(),
                wstar,
                norms,
                q,
            },
        ))
    }

    pub fn backward(&mut self, cache: &HeadCache<F>, dout: &[F]) -> Result<Tensor<F>, NumericError> {
        let (t, np, m) = (cache.x.rows(), self.input_dim(), self.heads());
        let dv = Tensor::from_vec(&[m, np], dout.to_vec())?;
        let mut dx = cache.q.matmul(&dv)?;
        let mut ds = cache.x.matmul_nt(&dv)?;
        let (mut y, mut dy) = (vec![F::zero(); t], vec![F::zero(); t]);
        for j in 0..m {
            for i in 0..t {
                y[i] = cache.q.data()[i * m + j];
                dy[i] = ds.data()[i * m + j];
            }
            softmax_bwd_in_place(&y, &mut dy);
            for i in 0..t {
                ds.data_mut()[i * m + j] = dy[i];
            }
        }
        dx.add_assign(&ds.matmul_nt(&cache.wstar)?)?;
        let mut dw = cache.x.matmul_tn(&ds)?;
        if self.normalize {
            for j in 0..m {
                let proj = (0..np)
                    .map(|i| cache.wstar.data()[i * m + j] * dw.data()[i * m + j])
                    .sum::<F>();
                for i in 0..np {
                    let g = &mut dw.data_mut()[i * m + j];
                    *g = (*g - cache.wstar.data()[i * m + j] * proj) / cache.norms[j];
                }
            }
        }
        self.w.grad.add_assign(&dw)?;
        Ok(dx)
    }

    pub fn cast<G: Scalar>(&self) -> HeadAggregator<G> {
        HeadAggregator {
            w: self.w.cast(),
            normalize: self.normalize,
        }
    }
}

/// Global attention with a single query taken from the last frame:
///
/// ```text
/// q = x_t P + b          a = softmax_s(q · x_s)
/// w = Σ_s a_s x_s        out = tanh([w : q] A)
/// ```
#[derive(Clone, Debug)]
pub struct TanhAttention<F = f32> {
    pub p: Parameter<F>,
    pub b: Parameter<F>,
    pub a: Parameter<F>,
}

#[derive(Clone, Debug)]
pub struct TanhCache<F> {
    x: Tensor<F>,
    attn: Vec<F>,
    ctx: Vec<F>,
    out: Vec<F>,
}

impl<F: Scalar> TanhCache<F> {
    pub fn attention(&self) -> &[F] {
        &self.attn
    }

    /// The attention context `w`.
    pub fn context(&self) -> &[F] {
        &self.ctx[..self.ctx.len() / 2]
    }
}

impl<F: Scalar> TanhAttention<F> {
    pub fn new(prefix: &str, input: usize, rng: &mut impl Rng) -> Self {
        Self {
            p: Parameter::uniform(format!("{prefix}.p"), &[input, input], input, rng),
            b: Parameter::zeros(format!("{prefix}.b"), &[input]),
            a: Parameter::uniform(format!("{prefix}.a"), &[2 * input, input], 2 * input, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.p.value.rows()
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Vec<F>, TanhCache<F>), EncoderError> {
        let np = self.input_dim();
        expect_cols("tanh_attention_fwd", x, np)?;
        let t = x.rows();
        let mut q = self.b.value.data().to_vec();
        gemm_nn(x.row(t - 1), self.p.value.data(), &mut q, 1, np, np);
        let mut attn: Vec<F> = (0..t).map(|i| dot(x.row(i), &q)).collect();
        softmax_in_place(&mut attn);
        let mut ctx = vec![F::zero(); 2 * np];
        for (i, &a) in attn.iter().enumerate() {
            axpy(a, x.row(i), &mut ctx[..np]);
        }
        ctx[np..].copy_from_slice(&q);
        let mut out = vec![F::zero(); np];
        gemm_nn(&ctx, self.a.value.data(), &mut out, 1, 2 * np, np);
        out.iter_mut().for_each(|u| *u = u.tanh());
        Ok((
            out.clone(),
            TanhCache {
                x: x.clone(),
                attn,
                ctx,
                out,
            },
        ))
    }

    pub fn backward(&mut self, cache: &TanhCache<F>, dout: &[F]) -> Result<Tensor<F>, NumericError> {
        let np = self.input_dim();
        let x = &cache.x;
        let t = x.rows();
        let du: Vec<F> = dout
            .iter()
            .zip(&cache.out)
            .map(|(&g, &o)| g * (F::one() - o * o))
            .collect();
        gemm_tn(&cache.ctx, &du, self.a.grad.data_mut(), 1, 2 * np, np);
        let mut dctx = vec![F::zero(); 2 * np];
        gemm_nt(&du, self.a.value.data(), &mut dctx, 1, np, 2 * np);
        let (dw, dq_direct) = dctx.split_at(np);
        let mut dq = dq_direct.to_vec();
        let q = &cache.ctx[np..];

        let mut dx = Tensor::zeros(&[t, np]);
        let mut da: Vec<F> = (0..t).map(|i| dot(x.row(i), dw)).collect();
        for (i, &a) in cache.attn.iter().enumerate() {
            axpy(a, dw, dx.row_mut(i));
        }
        softmax_bwd_in_place(&cache.attn, &mut da);
        for (i, &ds) in da.iter().enumerate() {
            axpy(ds, x.row(i), &mut dq);
            axpy(ds, q, dx.row_mut(i));
        }
        gemm_tn(x.row(t - 1), &dq, self.p.grad.data_mut(), 1, np, np);
        self.b.grad.data_mut().iter_mut().zip(&dq).for_each(|(g, &d)| *g += d);
        gemm_nt(&dq, self.p.value.data(), dx.row_mut(t - 1), 1, np, np);
        Ok(dx)
    }

    pub fn cast<G: Scalar>(&self) -> TanhAttention<G> {
        TanhAttention {
            p: self.p.cast(),
            b: self.b.cast(),
            a: self.a.cast(),
        }
    }
}

/// Flattened last `k` rows of `h`.
pub fn last_k<F: Scalar>(h: &Tensor<F>, k: usize) -> Result<Vec<F>, EncoderError> {
    let t = h.rows();
    if t < k || k == 0 {
        return Err(EncoderError::SequenceTooShort { t, k });
    }
    Ok(h.data()[(t - k) * h.cols()..].to_vec())
}

pub fn last_k_bwd<F: Scalar>(t: usize, width: usize, dout: &[F]) -> Tensor<F> {
    let mut dx = Tensor::zeros(&[t, width]);
    let n = dx.len();
    dx.data_mut()[n - dout.len()..].copy_from_slice(dout);
    dx
}

/// `v / ‖v‖` and the norm. A zero vector maps to zero.
pub fn l2_normalize<F: Scalar>(v: &[F]) -> (Vec<F>, F) {
    let norm = dot(v, v).sqrt();
    let denom = norm.max(F::c(1e-12));
    (v.iter().map(|&x| x / denom).collect(), norm)
}

pub fn l2_normalize_bwd<F: Scalar>(y: &[F], norm: F, dy: &[F]) -> Vec<F> {
    let denom = norm.max(F::c(1e-12));
    let proj = dot(y, dy);
    y.iter().zip(dy).map(|(&yi, &gi)| (gi - yi * proj) / denom).collect()
}

#[derive(Clone, Debug)]
pub enum Aggregator<F = f32> {
    Heads(HeadAggregator<F>),
    Tanh(TanhAttention<F>),
    LastK(usize),
}

#[derive(Clone, Debug)]
pub enum AggregatorCache<F> {
    Heads(HeadCache<F>),
    Tanh(TanhCache<F>),
    LastK { t: usize, width: usize },
}

impl<F: Scalar> Aggregator<F> {
    pub fn new(cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let np = cfg.agg_input_dim();
        match cfg.aggregator {
            AggregatorKind::Nmha => Self::Heads(HeadAggregator::new("agg", np, cfg.agg_heads, true, rng)),
            AggregatorKind::Mha => Self::Heads(HeadAggregator::new("agg", np, cfg.agg_heads, false, rng)),
            AggregatorKind::TanhAtt => Self::Tanh(TanhAttention::new("agg", np, rng)),
            AggregatorKind::LastK => Self::LastK(cfg.last_k),
            AggregatorKind::LastState => Self::LastK(1),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Vec<F>, AggregatorCache<F>), EncoderError> {
        match self {
            Self::Heads(a) => a.forward(x).map(|(o, c)| (o, AggregatorCache::Heads(c))),
            Self::Tanh(a) => a.forward(x).map(|(o, c)| (o, AggregatorCache::Tanh(c))),
            Self::LastK(k) => Ok((
                last_k(x, *k)?,
                AggregatorCache::LastK {
                    t: x.rows(),
                    width: x.cols(),
                },
            )),
        }
    }

    pub fn backward(&mut self, cache: &AggregatorCache<F>, dout: &[F]) -> Result<Tensor<F>, NumericError> {
        match (self, cache) {
            (Self::Heads(a), AggregatorCache::Heads(c)) => a.backward(c, dout),
            (Self::Tanh(a), AggregatorCache::Tanh(c)) => a.backward(c, dout),
            (Self::LastK(_), AggregatorCache::LastK { t, width }) => Ok(last_k_bwd(*t, *width, dout)),
            _ => Err(NumericError::ShapeMismatch {
                op: "aggregator_bwd",
                expected: "cache from the same aggregator".into(),
                got: "cache of a different kind".into(),
            }),
        }
    }

    pub fn cast<G: Scalar>(&self) -> Aggregator<G> {
        match self {
            Self::Heads(a) => Aggregator::Heads(a.cast()),
            Self::Tanh(a) => Aggregator::Tanh(a.cast()),
            Self::LastK(k) => Aggregator::LastK(*k),
        }
    }
}

impl<F: Scalar> Module<F> for Aggregator<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        match self {
            Self::Heads(a) => vec![&a.w],
            Self::Tanh(a) => vec![&a.p, &a.b, &a.a],
            Self::LastK(_) => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        match self {
            Self::Heads(a) => vec![&mut a.w],
            Self::Tanh(a) => vec![&mut a.p, &mut a.b, &mut a.a],
            Self::LastK(_) => vec![],
        }
    }
}
