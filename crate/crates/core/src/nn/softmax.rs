use super::{NumericError, Scalar, Tensor};

/// Max-shifted softmax over a slice.
pub fn softmax_in_place<F: Scalar>(x: &mut [F]) {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Turns `dy` (upstream gradient w.r.t. the softmax output `y`) into the
/// gradient w.r.t. the logits: `y ∘ (dy − ⟨y, dy⟩)`.
pub fn softmax_bwd_in_place<F: Scalar>(y: &[F], dy: &mut [F]) {
    let inner: F = y.iter().zip(dy.iter()).map(|(&a, &b)| a * b).sum();
    for (g, &p) in dy.iter_mut().zip(y) {
        *g = p * (*g - inner);
    }
}

/// Softmax of a rank-2 tensor along `axis` (0 = down columns, 1 = along rows).
pub fn softmax<F: Scalar>(x: &Tensor<F>, axis: usize) -> Result<Tensor<F>, NumericError> {
    if x.shape().len() != 2 || axis > 1 {
        return Err(NumericError::ShapeMismatch {
            op: "softmax",
            expected: "rank-2 tensor with axis 0 or 1".into(),
            got: format!("{:?} axis {axis}", x.shape()),
        });
    }
    let (r, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    if axis == 1 {
        for i in 0..r {
            softmax_in_place(out.row_mut(i));
        }
    } else {
        let mut col = vec![F::zero(); r];
        for j in 0..c {
            for i in 0..r {
                col[i] = x.data()[i * c + j];
            }
            softmax_in_place(&mut col);
            for i in 0..r {
                out.data_mut()[i * c + j] = col[i];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_inputs_are_uniform() {
        let x = Tensor::<f64>::filled(&[1, 4], 2.5);
        let y = softmax(&x, 1).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn zero_and_ln3() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 3f64.ln()]).unwrap();
        let y = softmax(&x, 1).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
        let col = softmax(&x.clone().reshape(&[2, 1]).unwrap(), 0).unwrap();
        assert!((col.data()[1] - 0.75).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 1..16), c in -100.0f64..100.0) {
            let n = v.len();
            let x = Tensor::from_vec(&[1, n], v.clone()).unwrap();
            let y = softmax(&x, 1).unwrap();
            let s: f64 = y.data().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(y.data().iter().all(|&p| p > 0.0));
            let shifted = Tensor::from_vec(&[1, n], v.iter().map(|a| a + c).collect()).unwrap();
            let ys = softmax(&shifted, 1).unwrap();
            for (a, b) in y.data().iter().zip(ys.data()) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }
}
