use rand::Rng;

use super::{gemm_nn, gemm_nt, sigmoid, Module, NumericError, Parameter, Scalar, Tensor};

/// Single GRU layer. Gate blocks are laid out `[r | z | n]` along the
/// output axis of both weight matrices; each gate has an input-side and a
/// hidden-side bias, and the reset gate multiplies the hidden-side candidate
/// pre-activation:
///
/// ```text
/// r = σ(x W_r + b_r + h U_r + c_r)
/// z = σ(x W_z + b_z + h U_z + c_z)
/// n = tanh(x W_n + b_n + r ∘ (h U_n + c_n))
/// h' = (1 − z) ∘ n + z ∘ h
/// ```
#[derive(Clone, Debug)]
pub struct Gru<F = f32> {
    pub w_ih: Parameter<F>,
    pub w_hh: Parameter<F>,
    pub b_ih: Parameter<F>,
    pub b_hh: Parameter<F>,
}

#[derive(Clone, Debug)]
pub struct GruCache<F> {
    x: Tensor<F>,
    h0: Vec<F>,
    /// Hidden sequence `[t × h]`.
    hs: Tensor<F>,
    r: Tensor<F>,
    z: Tensor<F>,
    n: Tensor<F>,
    /// Hidden-side candidate pre-activation `h U_n + c_n`.
    ghn: Tensor<F>,
}

impl<F: Scalar> GruCache<F> {
    pub fn output(&self) -> &Tensor<F> {
        &self.hs
    }
}

impl<F: Scalar> Gru<F> {
    pub fn new(prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_ih: Parameter::uniform(format!("{prefix}.w_ih"), &[input, 3 * hidden], input, rng),
            w_hh: Parameter::uniform(format!("{prefix}.w_hh"), &[hidden, 3 * hidden], hidden, rng),
            b_ih: Parameter::zeros(format!("{prefix}.b_ih"), &[3 * hidden]),
            b_hh: Parameter::zeros(format!("{prefix}.b_hh"), &[3 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.value.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.value.rows()
    }

    /// Runs the recurrence over `x: [t × in]` from `h0`, returning the
    /// hidden states `[t × h]` inside the cache.
    pub fn forward(&self, x: &Tensor<F>, h0: &[F]) -> Result<GruCache<F>, NumericError> {
        let (inp, h) = (self.input_dim(), self.hidden_dim());
        if x.shape().len() != 2 || x.cols() != inp || h0.len() != h {
            return Err(NumericError::ShapeMismatch {
                op: "gru_fwd",
                expected: format!("x [t × {inp}], h0 [{h}]"),
                got: format!("x {:?}, h0 [{}]", x.shape(), h0.len()),
            });
        }
        let t = x.rows();
        let h3 = 3 * h;
        let mut gi = Tensor::zeros(&[t, h3]);
        gemm_nn(x.data(), self.w_ih.value.data(), gi.data_mut(), t, inp, h3);

        let mut hs = Tensor::zeros(&[t, h]);
        let mut r = Tensor::zeros(&[t, h]);
        let mut z = Tensor::zeros(&[t, h]);
        let mut n = Tensor::zeros(&[t, h]);
        let mut ghn = Tensor::zeros(&[t, h]);
        let mut gh = vec![F::zero(); h3];
        let mut prev = h0.to_vec();
        let bih = self.b_ih.value.data();
        let bhh = self.b_hh.value.data();
        for s in 0..t {
            gh.copy_from_slice(bhh);
            gemm_nn(&prev, self.w_hh.value.data(), &mut gh, 1, h, h3);
            let gis = gi.row(s);
            for j in 0..h {
                let rj = sigmoid(gis[j] + bih[j] + gh[j]);
                let zj = sigmoid(gis[h + j] + bih[h + j] + gh[h + j]);
                let nj = (gis[2 * h + j] + bih[2 * h + j] + rj * gh[2 * h + j]).tanh();
                let hj = (F::one() - zj) * nj + zj * prev[j];
                r.row_mut(s)[j] = rj;
                z.row_mut(s)[j] = zj;
                n.row_mut(s)[j] = nj;
                ghn.row_mut(s)[j] = gh[2 * h + j];
                hs.row_mut(s)[j] = hj;
            }
            prev.copy_from_slice(hs.row(s));
        }
        Ok(GruCache {
            x: x.clone(),
            h0: h0.to_vec(),
            hs,
            r,
            z,
            n,
            ghn,
        })
    }

    /// Backpropagation through time. `dhs` is the gradient w.r.t. every
    /// hidden state; returns `(dx, dh0)` and accumulates parameter grads.
    pub fn backward(&mut self, cache: &GruCache<F>, dhs: &Tensor<F>) -> Result<(Tensor<F>, Vec<F>), NumericError> {
        if dhs.shape() != cache.hs.shape() {
            return Err(NumericError::ShapeMismatch {
                op: "gru_bwd",
                expected: format!("{:?}", cache.hs.shape()),
                got: format!("{:?}", dhs.shape()),
            });
        }
        let (inp, h) = (self.input_dim(), self.hidden_dim());
        let t = dhs.rows();
        let h3 = 3 * h;
        let mut dgi = Tensor::zeros(&[t, h3]);
        let mut dgh = Tensor::zeros(&[t, h3]);
        let mut carry = vec![F::zero(); h];
        for s in (0..t).rev() {
            let prev: &[F] = if s == 0 { &cache.h0 } else { cache.hs.row(s - 1) };
            let (r, z, n, ghn) = (cache.r.row(s), cache.z.row(s), cache.n.row(s), cache.ghn.row(s));
            let dh_up = dhs.row(s);
            let mut dprev = vec![F::zero(); h];
            {
                let dgis = dgi.row_mut(s);
                for j in 0..h {
                    let dh = dh_up[j] + carry[j];
                    let dn = dh * (F::one() - z[j]);
                    let dz = dh * (prev[j] - n[j]);
                    dprev[j] = dh * z[j];
                    let dan = dn * (F::one() - n[j] * n[j]);
                    let dr = dan * ghn[j];
                    let dar = dr * r[j] * (F::one() - r[j]);
                    let daz = dz * z[j] * (F::one() - z[j]);
                    dgis[j] = dar;
                    dgis[h + j] = daz;
                    dgis[2 * h + j] = dan;
                }
            }
            {
                let dgis = dgi.row(s).to_vec();
                let dghs = dgh.row_mut(s);
                for j in 0..h {
                    dghs[j] = dgis[j];
                    dghs[h + j] = dgis[h + j];
                    dghs[2 * h + j] = dgis[2 * h + j] * r[j];
                }
            }
            gemm_nt(dgh.row(s), self.w_hh.value.data(), &mut dprev, 1, h3, h);
            carry = dprev;
        }

        // h_{s-1} for every step, stacked.
        let mut hprev = Tensor::zeros(&[t, h]);
        for s in 0..t {
            let src: &[F] = if s == 0 { &cache.h0 } else { cache.hs.row(s - 1) };
            hprev.row_mut(s).copy_from_slice(src);
        }
        self.w_hh.grad.add_assign(&hprev.matmul_tn(&dgh)?)?;
        self.w_ih.grad.add_assign(&cache.x.matmul_tn(&dgi)?)?;
        for s in 0..t {
            for (b, &g) in self.b_ih.grad.data_mut().iter_mut().zip(dgi.row(s)) {
                *b += g;
            }
            for (b, &g) in self.b_hh.grad.data_mut().iter_mut().zip(dgh.row(s)) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(&[t, inp]);
        gemm_nt(dgi.data(), self.w_ih.value.data(), dx.data_mut(), t, h3, inp);
        Ok((dx, carry))
    }

    pub fn cast<G: Scalar>(&self) -> Gru<G> {
        Gru {
            w_ih: self.w_ih.cast(),
            w_hh: self.w_hh.cast(),
            b_ih: self.b_ih.cast(),
            b_hh: self.b_hh.cast(),
        }
    }
}

impl<F: Scalar> Module<F> for Gru<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }
}
