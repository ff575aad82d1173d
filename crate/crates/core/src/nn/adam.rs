use super::{NumericError, Parameter, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter in the order
/// the parameters are passed to [`AdamState::step`].
#[derive(Debug, Clone)]
pub struct AdamState<F = f32> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &[&Parameter<F>], cfg: AdamConfig) -> Self {
        Self {
            m: params.iter().map(|p| p.value.zeros_like()).collect(),
            v: params.iter().map(|p| p.value.zeros_like()).collect(),
            step: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    /// Bias-corrected Adam update of every parameter from its `grad`.
    pub fn step(&mut self, params: &mut [&mut Parameter<F>]) -> Result<(), NumericError> {
        if params.len() != self.m.len() {
            return Err(NumericError::ShapeMismatch {
                op: "adam_step",
                expected: format!("{} parameters", self.m.len()),
                got: format!("{}", params.len()),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let (lr, eps) = (F::c(self.lr), F::c(self.eps));
        let (c1, c2) = (F::c(c1), F::c(c2));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.value.shape() != m.shape() {
                return Err(NumericError::ShapeMismatch {
                    op: "adam_step",
                    expected: format!("{:?}", m.shape()),
                    got: format!("{:?} for {}", p.value.shape(), p.name),
                });
            }
            let grad = p.grad.data().to_vec();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, (w, &g)) in p.value.data_mut().iter_mut().zip(&grad).enumerate() {
                md[i] = b1 * md[i] + (F::one() - b1) * g;
                vd[i] = b2 * vd[i] + (F::one() - b2) * g * g;
                let mhat = md[i] / c1;
                let vhat = vd[i] / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Parameter::<f64>::new("p", Tensor::filled(&[3], 0.5));
        p.grad.fill(2.0);
        let mut adam = AdamState::new(&[&p], AdamConfig::default());
        adam.step(&mut [&mut p]).unwrap();
        // m̂ = g, v̂ = g², Δ = -lr·g/(|g| + eps)
        let expected = 0.5 - 1e-3 * 2.0 / (2.0 + 1e-8);
        for &w in p.value.data() {
            assert!((w - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Parameter::<f32>::new("p", Tensor::filled(&[4], -1.25));
        let mut adam = AdamState::new(&[&p], AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut [&mut p]).unwrap();
        }
        assert!(p.value.data().iter().all(|&w| w == -1.25));
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn identical_gradients_update_identically() {
        let mut a = Parameter::<f32>::new("a", Tensor::filled(&[2], 0.1));
        let mut b = Parameter::<f32>::new("b", Tensor::filled(&[2], 0.1));
        a.grad.fill(0.37);
        b.grad.fill(0.37);
        let mut adam = AdamState::new(&[&a, &b], AdamConfig::default());
        for _ in 0..3 {
            adam.step(&mut [&mut a, &mut b]).unwrap();
        }
        assert_eq!(a.value, b.value);
    }
}
