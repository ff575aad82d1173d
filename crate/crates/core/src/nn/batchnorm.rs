use super::{Module, NumericError, Parameter, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-feature normalization over the batch and time axes of a batch of
/// `[t_b × f]` sequences (sequences may differ in length).
#[derive(Clone, Debug)]
pub struct BatchNorm<F = f32> {
    pub gamma: Parameter<F>,
    pub beta: Parameter<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<F> {
    mode: BnMode,
    xhat: Vec<Tensor<F>>,
    inv_std: Vec<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(prefix: &str, features: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor::filled(&[features], F::one())),
            beta: Parameter::zeros(format!("{prefix}.beta"), &[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::filled(&[features], F::one()),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.value.len()
    }

    fn check(&self, xs: &[Tensor<F>]) -> Result<(), NumericError> {
        let f = self.features();
        for x in xs {
            if x.shape().len() != 2 || x.cols() != f {
                return Err(NumericError::ShapeMismatch {
                    op: "batchnorm_fwd",
                    expected: format!("[t × {f}]"),
                    got: format!("{:?}", x.shape()),
                });
            }
        }
        Ok(())
    }

    /// In `Train` mode normalizes with batch statistics and updates the
    /// running estimates; in `Eval` mode uses the running estimates verbatim.
    pub fn forward(&mut self, xs: &[Tensor<F>], mode: BnMode) -> Result<(Vec<Tensor<F>>, BatchNormCache<F>), NumericError> {
        self.check(xs)?;
        let f = self.features();
        let (mean, var) = match mode {
            BnMode::Eval => (self.running_mean.data().to_vec(), self.running_var.data().to_vec()),
            BnMode::Train => {
                let count: usize = xs.iter().map(Tensor::rows).sum();
                if count < 2 {
                    return Err(NumericError::DegenerateBatch(format!(
                        "batch norm needs at least 2 frames per feature in train mode, got {count}"
                    )));
                }
                let n = F::c(count as f64);
                let mut mean = vec![F::zero(); f];
                for x in xs {
                    for i in 0..x.rows() {
                        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                            *m += v;
                        }
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![F::zero(); f];
                for x in xs {
                    for i in 0..x.rows() {
                        for ((s, &v), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                }
                var.iter_mut().for_each(|s| *s /= n);

                let mom = F::c(self.momentum);
                let unbias = n / (n - F::one());
                for j in 0..f {
                    let rm = &mut self.running_mean.data_mut()[j];
                    *rm = (F::one() - mom) * *rm + mom * mean[j];
                    let rv = &mut self.running_var.data_mut()[j];
                    *rv = (F::one() - mom) * *rv + mom * var[j] * unbias;
                }
                (mean, var)
            }
        };
        Ok(self.apply(xs, mode, &mean, &var))
    }

    /// Eval-mode forward that does not need mutable access.
    pub fn forward_eval(&self, x: &Tensor<F>) -> Result<Tensor<F>, NumericError> {
        self.check(std::slice::from_ref(x))?;
        let (ys, _) = self.apply(
            std::slice::from_ref(x),
            BnMode::Eval,
            self.running_mean.data(),
            self.running_var.data(),
        );
        Ok(ys.into_iter().next().expect("one input"))
    }

    fn apply(&self, xs: &[Tensor<F>], mode: BnMode, mean: &[F], var: &[F]) -> (Vec<Tensor<F>>, BatchNormCache<F>) {
        let eps = F::c(self.eps);
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut ys = Vec::with_capacity(xs.len());
        let mut xhats = Vec::with_capacity(xs.len());
        for x in xs {
            let mut xhat = x.clone();
            let mut y = x.clone();
            for i in 0..x.rows() {
                let xr = xhat.row_mut(i);
                for j in 0..xr.len() {
                    xr[j] = (xr[j] - mean[j]) * inv_std[j];
                }
                let yr = y.row_mut(i);
                for j in 0..yr.len() {
                    yr[j] = gamma[j] * xr[j] + beta[j];
                }
            }
            ys.push(y);
            xhats.push(xhat);
        }
        (
            ys,
            BatchNormCache {
                mode,
                xhat: xhats,
                inv_std,
            },
        )
    }

    /// Accumulates `dγ`, `dβ` and returns the input gradients.
    pub fn backward(&mut self, cache: &BatchNormCache<F>, dys: &[Tensor<F>]) -> Result<Vec<Tensor<F>>, NumericError> {
        let f = self.features();
        if dys.len() != cache.xhat.len() {
            return Err(NumericError::ShapeMismatch {
                op: "batchnorm_bwd",
                expected: format!("{} sequences", cache.xhat.len()),
                got: format!("{}", dys.len()),
            });
        }
        let gamma = self.gamma.value.data().to_vec();
        let mut sum_dy = vec![F::zero(); f];
        let mut sum_dy_xhat = vec![F::zero(); f];
        let mut count = 0usize;
        for (dy, xhat) in dys.iter().zip(&cache.xhat) {
            if dy.shape() != xhat.shape() {
                return Err(NumericError::ShapeMismatch {
                    op: "batchnorm_bwd",
                    expected: format!("{:?}", xhat.shape()),
                    got: format!("{:?}", dy.shape()),
                });
            }
            count += dy.rows();
            for i in 0..dy.rows() {
                for j in 0..f {
                    let g = dy.row(i)[j];
                    sum_dy[j] += g;
                    sum_dy_xhat[j] += g * xhat.row(i)[j];
                }
            }
        }
        for j in 0..f {
            self.beta.grad.data_mut()[j] += sum_dy[j];
            self.gamma.grad.data_mut()[j] += sum_dy_xhat[j];
        }

        let n = F::c(count as f64);
        let mut dxs = Vec::with_capacity(dys.len());
        for (dy, xhat) in dys.iter().zip(&cache.xhat) {
            let mut dx = dy.clone();
            for i in 0..dy.rows() {
                let dr = dx.row_mut(i);
                let xr = xhat.row(i);
                for j in 0..f {
                    dr[j] = match cache.mode {
                        BnMode::Eval => dy.row(i)[j] * gamma[j] * cache.inv_std[j],
                        BnMode::Train => {
                            gamma[j] * cache.inv_std[j] / n
                                * (n * dy.row(i)[j] - sum_dy[j] - xr[j] * sum_dy_xhat[j])
                        }
                    };
                }
            }
            dxs.push(dx);
        }
        Ok(dxs)
    }

    pub fn cast<G: Scalar>(&self) -> BatchNorm<G> {
        BatchNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

impl<F: Scalar> Module<F> for BatchNorm<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
