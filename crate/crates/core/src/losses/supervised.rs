use super::{check_labels, LossError};
use crate::nn::{NumericError, Scalar, Tensor};

/// Mean batch loss and its gradient with respect to the input rows.
#[derive(Debug, Clone)]
pub struct LossGrad<F> {
    pub loss: F,
    pub dx: Tensor<F>,
}

/// Mean cross-entropy of `logits: [B × C]`.
pub fn softmax_ce<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<LossGrad<F>, LossError> {
    if logits.shape().len() != 2 {
        return Err(NumericError::ShapeMismatch {
            op: "softmax_ce",
            expected: "[B × C]".into(),
            got: format!("{:?}", logits.shape()),
        }
        .into());
    }
    let (b, c) = (logits.rows(), logits.cols());
    check_labels(labels, b, c)?;
    let inv_b = F::one() / F::c(b as f64);
    let mut loss = F::zero();
    let mut dx = logits.zeros_like();
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        let max = z.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        loss += lse - z[y];
        for (j, g) in dx.row_mut(i).iter_mut().enumerate() {
            *g = ((z[j] - lse).exp() - if j == y { F::one() } else { F::zero() }) * inv_b;
        }
    }
    Ok(LossGrad { loss: loss * inv_b, dx })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad<F> {
    pub loss: F,
    pub da: Vec<F>,
    pub dp: Vec<F>,
    pub dn: Vec<F>,
}

/// `max(0, ‖a−p‖² − ‖a−n‖² + margin)`; the gradient is zero at the hinge.
pub fn triplet_loss<F: Scalar>(a: &[F], p: &[F], n: &[F], margin: F) -> TripletGrad<F> {
    let sq = |u: &[F], v: &[F]| u.iter().zip(v).map(|(&x, &y)| (x - y) * (x - y)).sum::<F>();
    let h = sq(a, p) - sq(a, n) + margin;
    let zeros = vec![F::zero(); a.len()];
    if h <= F::zero() {
        return TripletGrad {
            loss: F::zero(),
            da: zeros.clone(),
            dp: zeros.clone(),
            dn: zeros,
        };
    }
    let two = F::c(2.0);
    TripletGrad {
        loss: h,
        da: p.iter().zip(n).map(|(&p, &n)| two * (n - p)).collect(),
        dp: a.iter().zip(p).map(|(&a, &p)| -two * (a - p)).collect(),
        dn: a.iter().zip(n).map(|(&a, &n)| two * (a - n)).collect(),
    }
}
