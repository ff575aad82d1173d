use rand::Rng;

use super::{Module, NumericError, Parameter, Scalar, Tensor};

/// Gradients of `y = xW + b`.
#[derive(Debug, Clone)]
pub struct LinearGrads<F> {
    pub dx: Tensor<F>,
    pub dw: Tensor<F>,
    pub db: Tensor<F>,
}

/// `y = xW + b` for `x: [t×n]`, `W: [n×o]`, `b: [o]`.
pub fn linear_fwd<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: Option<&Tensor<F>>) -> Result<Tensor<F>, NumericError> {
    let mut y = x.matmul(w)?;
    if let Some(b) = b {
        if b.len() != y.cols() {
            return Err(NumericError::ShapeMismatch {
                op: "linear_fwd",
                expected: format!("bias of length {}", y.cols()),
                got: format!("{:?}", b.shape()),
            });
        }
        for i in 0..y.rows() {
            for (yi, &bi) in y.row_mut(i).iter_mut().zip(b.data()) {
                *yi += bi;
            }
        }
    }
    Ok(y)
}

pub fn linear_bwd<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, dy: &Tensor<F>) -> Result<LinearGrads<F>, NumericError> {
    let dw = x.matmul_tn(dy)?;
    let dx = dy.matmul_nt(w)?;
    let mut db = Tensor::zeros(&[dy.cols()]);
    for i in 0..dy.rows() {
        for (d, &g) in db.data_mut().iter_mut().zip(dy.row(i)) {
            *d += g;
        }
    }
    Ok(LinearGrads { dx, dw, db })
}

#[derive(Clone, Debug)]
pub struct Linear<F = f32> {
    pub weight: Parameter<F>,
    pub bias: Option<Parameter<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(prefix: &str, input: usize, output: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Self {
            weight: Parameter::uniform(format!("{prefix}.weight"), &[input, output], input, rng),
            bias: bias.then(|| Parameter::zeros(format!("{prefix}.bias"), &[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>, NumericError> {
        linear_fwd(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value))
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Tensor<F>, dy: &Tensor<F>) -> Result<Tensor<F>, NumericError> {
        let g = linear_bwd(x, &self.weight.value, dy)?;
        self.weight.grad.add_assign(&g.dw)?;
        if let Some(b) = self.bias.as_mut() {
            b.grad.add_assign(&g.db)?;
        }
        Ok(g.dx)
    }

    pub fn cast<G: Scalar>(&self) -> Linear<G> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(Parameter::cast),
        }
    }
}

impl<F: Scalar> Module<F> for Linear<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_passes_input_through() {
        let x = Tensor::<f32>::from_vec(&[2, 3], vec![1., -2., 3., 0.5, 0., 4.]).unwrap();
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let b = Tensor::zeros(&[3]);
        assert_eq!(linear_fwd(&x, &w, Some(&b)).unwrap(), x);
    }

    #[test]
    fn bias_gradient_of_sum_counts_rows() {
        let t = 5;
        let x = Tensor::<f32>::filled(&[t, 2], 0.3);
        let w = Tensor::filled(&[2, 4], 0.1);
        let dy = Tensor::filled(&[t, 4], 1.0);
        let g = linear_bwd(&x, &w, &dy).unwrap();
        assert!(g.db.data().iter().all(|&v| v == t as f32));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 2]);
        assert!(linear_fwd(&x, &w, None).is_err());
        let w = Tensor::zeros(&[3, 2]);
        let b = Tensor::zeros(&[3]);
        assert!(linear_fwd(&x, &w, Some(&b)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (t, n, o) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..6));
            let mut layer = Linear::<f64>::new("l", n, o, true, &mut rng);
            layer.bias.as_mut().unwrap().value = Tensor::from_vec(&[o], (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let x = Tensor::from_vec(&[t, n], (0..t * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let coef = Tensor::from_vec(&[t, o], (0..t * o).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            // loss = sum(coef ∘ y)
            let dx = layer.backward(&x, &coef).unwrap();
            let analytic = vec![dx, layer.weight.grad.clone(), layer.bias.as_ref().unwrap().grad.clone()];
            let mut vals = vec![x.clone(), layer.weight.value.clone(), layer.bias.as_ref().unwrap().value.clone()];
            let report = grad_check(&mut vals, &analytic, &GradCheckOptions::float64(), |v| {
                let y = linear_fwd(&v[0], &v[1], Some(&v[2])).unwrap();
                y.data().iter().zip(coef.data()).map(|(a, b)| a * b).sum()
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-5, "{report:?}");
        }
    }
}
