//! Minimal dense numeric kernel: tensors, the layers the encoder needs with
//! hand-written backward passes, Adam, a finite-difference gradient checker
//! and the checkpoint container.

mod adam;
mod batchnorm;
pub mod checkpoint;
mod gradcheck;
mod gru;
mod layernorm;
mod linear;
mod softmax;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNorm, BatchNormCache, BnMode};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use gru::{Gru, GruCache};
pub use layernorm::{LayerNorm, LayerNormCache};
pub use linear::{linear_bwd, linear_fwd, Linear, LinearGrads};
pub use softmax::{softmax, softmax_bwd_in_place, softmax_in_place};
pub use tensor::{Scalar, Tensor};

pub(crate) use tensor::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
}

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter<F = f32> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let grad = value.zeros_like();
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| F::c(rng.gen_range(-bound..bound))).collect();
        Self::new(name, Tensor::from_vec(shape, data).expect("shape product"))
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    pub fn cast<G: Scalar>(&self) -> Parameter<G> {
        Parameter {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}

/// Anything that owns parameters.
pub trait Module<F: Scalar> {
    fn params(&self) -> Vec<&Parameter<F>>;
    fn params_mut(&mut self) -> Vec<&mut Parameter<F>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(F::zero());
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    fn param_values(&self) -> Vec<Tensor<F>> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    fn param_grads(&self) -> Vec<Tensor<F>> {
        self.params().iter().map(|p| p.grad.clone()).collect()
    }

    /// Overwrites parameter values in [`Module::params`] order.
    fn set_param_values(&mut self, values: &[Tensor<F>]) -> Result<(), NumericError> {
        let dst = self.params_mut();
        if dst.len() != values.len() {
            return Err(NumericError::ShapeMismatch {
                op: "set_param_values",
                expected: format!("{} tensors", dst.len()),
                got: format!("{}", values.len()),
            });
        }
        for (p, v) in dst.into_iter().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(NumericError::ShapeMismatch {
                    op: "set_param_values",
                    expected: format!("{:?} for {}", p.value.shape(), p.name),
                    got: format!("{:?}", v.shape()),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }

    /// Adds another replica's gradients into this one, parameter by parameter.
    fn accumulate_grads(&mut self, other: &Self) -> Result<(), NumericError>
    where
        Self: Sized,
    {
        let src = other.params();
        let dst = self.params_mut();
        if src.len() != dst.len() {
            return Err(NumericError::ShapeMismatch {
                op: "accumulate_grads",
                expected: format!("{} parameters", dst.len()),
                got: format!("{}", src.len()),
            });
        }
        for (d, s) in dst.into_iter().zip(src) {
            d.grad.add_assign(&s.grad)?;
        }
        Ok(())
    }

    /// Scales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    fn clip_grad_norm(&mut self, max_norm: F) -> F {
        let total: F = self.params().iter().map(|p| p.grad.sq_norm()).sum::<F>().sqrt();
        if total > max_norm && total.is_finite() {
            let s = max_norm / total;
            for p in self.params_mut() {
                p.grad.scale(s);
            }
        }
        total
    }
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
