use super::{Module, NumericError, Parameter, Scalar, Tensor};

/// Row-wise layer normalization with learnable scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm<F = f32> {
    pub gamma: Parameter<F>,
    pub beta: Parameter<F>,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<F> {
    xhat: Tensor<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(prefix: &str, features: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor::filled(&[features], F::one())),
            beta: Parameter::zeros(format!("{prefix}.beta"), &[features]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, LayerNormCache<F>), NumericError> {
        let f = self.gamma.value.len();
        if x.cols() != f {
            return Err(NumericError::ShapeMismatch {
                op: "layernorm_fwd",
                expected: format!("[t × {f}]"),
                got: format!("{:?}", x.shape()),
            });
        }
        let eps = F::c(self.eps);
        let n = F::c(f as f64);
        let mut xhat = x.clone();
        let mut y = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let r = x.row(i);
            let mean = r.iter().copied().sum::<F>() / n;
            let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            let xr = xhat.row_mut(i);
            for v in xr.iter_mut() {
                *v = (*v - mean) * is;
            }
            let yr = y.row_mut(i);
            for j in 0..f {
                yr[j] = self.gamma.value.data()[j] * xhat.row(i)[j] + self.beta.value.data()[j];
            }
        }
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(&mut self, cache: &LayerNormCache<F>, dy: &Tensor<F>) -> Result<Tensor<F>, NumericError> {
        if dy.shape() != cache.xhat.shape() {
            return Err(NumericError::ShapeMismatch {
                op: "layernorm_bwd",
                expected: format!("{:?}", cache.xhat.shape()),
                got: format!("{:?}", dy.shape()),
            });
        }
        let f = self.gamma.value.len();
        let n = F::c(f as f64);
        let mut dx = dy.clone();
        for i in 0..dy.rows() {
            let g = dy.row(i);
            let xh = cache.xhat.row(i);
            let mut s1 = F::zero();
            let mut s2 = F::zero();
            for j in 0..f {
                self.gamma.grad.data_mut()[j] += g[j] * xh[j];
                self.beta.grad.data_mut()[j] += g[j];
                let dxh = g[j] * self.gamma.value.data()[j];
                s1 += dxh;
                s2 += dxh * xh[j];
            }
            let is = cache.inv_std[i];
            let dr = dx.row_mut(i);
            for j in 0..f {
                let dxh = g[j] * self.gamma.value.data()[j];
                dr[j] = is / n * (n * dxh - s1 - xh[j] * s2);
            }
        }
        Ok(dx)
    }

    pub fn cast<G: Scalar>(&self) -> LayerNorm<G> {
        LayerNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            eps: self.eps,
        }
    }
}

impl<F: Scalar> Module<F> for LayerNorm<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
