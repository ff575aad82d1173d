use rand::Rng;

use super::{check_labels, LossError};
use crate::nn::{axpy, dot, softmax_in_place, Module, NumericError, Parameter, Scalar, Tensor};

/// Tolerance on ‖x‖₂ = 1 for softtriple inputs.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// K proxies per class. Rows are stored raw and L2-normalized at use time.
#[derive(Clone, Debug)]
pub struct ClassCenters<F = f32> {
    /// `[C × K × D]`
    pub centers: Parameter<F>,
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl<F: Scalar> ClassCenters<F> {
    pub fn new(centers: Tensor<F>, lambda: f64, delta: f64, gamma: f64) -> Result<Self, LossError> {
        let s = centers.shape();
        if s.len() != 3 || s.contains(&0) {
            return Err(LossError::InvalidConfig(format!(
                "centers must be a non-empty [C × K × D] tensor, got {s:?}"
            )));
        }
        if !(lambda > 0.0) || !(delta >= 0.0) || !(gamma > 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "need λ > 0, δ ≥ 0, γ > 0 (got {lambda}, {delta}, {gamma})"
            )));
        }
        Ok(Self {
            centers: Parameter::new("decoder.centers", centers),
            lambda,
            delta,
            gamma,
        })
    }

    /// Seeded random unit centers with λ = 70, δ = 0.04, γ = 1.
    pub fn random(classes: usize, k: usize, dim: usize, rng: &mut impl Rng) -> Result<Self, LossError> {
        let mut data: Vec<F> = (0..classes * k * dim).map(|_| F::c(rng.gen_range(-1.0..1.0))).collect();
        for row in data.chunks_mut(dim.max(1)) {
            let n = dot(row, row).sqrt();
            if n > F::zero() {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        Self::new(Tensor::from_vec(&[classes, k, dim], data)?, 70.0, 0.04, 1.0)
    }

    pub fn classes(&self) -> usize {
        self.centers.value.shape()[0]
    }

    pub fn per_class(&self) -> usize {
        self.centers.value.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.centers.value.shape()[2]
    }

    /// Unit center rows `[C·K × D]` flattened, plus the raw row norms.
    fn unit_rows(&self) -> (Vec<F>, Vec<F>) {
        let d = self.dim();
        let mut w = self.centers.value.data().to_vec();
        let mut norms = Vec::with_capacity(w.len() / d);
        for row in w.chunks_mut(d) {
            let n = dot(row, row).sqrt().max(F::c(1e-12));
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        (w, norms)
    }

    /// Class owning the single closest center to `x` by cosine.
    pub fn nearest_class(&self, x: &[F]) -> usize {
        let (w, _) = self.unit_rows();
        let k = self.per_class();
        let mut best = (F::neg_infinity(), 0);
        for (r, row) in w.chunks(self.dim()).enumerate() {
            let s = dot(x, row);
            if s > best.0 {
                best = (s, r / k);
            }
        }
        best.1
    }

    pub fn cast<G: Scalar>(&self) -> ClassCenters<G> {
        ClassCenters {
            centers: self.centers.cast(),
            lambda: self.lambda,
            delta: self.delta,
            gamma: self.gamma,
        }
    }
}

impl<F: Scalar> Module<F> for ClassCenters<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.centers]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.centers]
    }
}

fn check_unit<F: Scalar>(x: &[F], row: usize) -> Result<(), LossError> {
    let norm = dot(x, x).as_f64().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOL || !norm.is_finite() {
        return Err(LossError::UnnormalizedInput { row, norm });
    }
    Ok(())
}

/// Per-center cosines `s`, their within-class softmax weights `p` and the
/// relaxed class similarities `S′`.
struct RowSims<F> {
    s: Vec<F>,
    p: Vec<F>,
    big: Vec<F>,
}

fn row_similarities<F: Scalar>(x: &[F], w: &[F], k: usize, gamma: F) -> RowSims<F> {
    let s: Vec<F> = w.chunks(x.len()).map(|row| dot(x, row)).collect();
    let mut p: Vec<F> = s.iter().map(|&v| v / gamma).collect();
    for chunk in p.chunks_mut(k) {
        softmax_in_place(chunk);
    }
    let big = s.chunks(k).zip(p.chunks(k)).map(|(s, p)| dot(s, p)).collect();
    RowSims { s, p, big }
}

/// `S′_c = Σ_k softmax_k(xᵀw_c^k / γ) · xᵀw_c^k` for unit `x`.
pub fn softtriple_similarity<F: Scalar>(x: &[F], centers: &ClassCenters<F>, c: usize) -> Result<F, LossError> {
    if x.len() != centers.dim() {
        return Err(NumericError::ShapeMismatch {
            op: "softtriple_similarity",
            expected: format!("{} dims", centers.dim()),
            got: format!("{}", x.len()),
        }
        .into());
    }
    check_labels(&[c], 1, centers.classes())?;
    check_unit(x, 0)?;
    let (w, _) = centers.unit_rows();
    let k = centers.per_class();
    let d = centers.dim();
    let sims = row_similarities(x, &w[c * k * d..(c + 1) * k * d], k, F::c(centers.gamma));
    Ok(sims.big[0])
}

#[derive(Debug, Clone)]
pub struct SoftTripleGrad<F> {
    /// Mean over the batch.
    pub loss: F,
    pub dx: Tensor<F>,
    /// Gradient with respect to the raw (unnormalized) centers.
    pub dcenters: Tensor<F>,
}

/// Mean softtriple loss over unit rows of `x: [B × D]`.
pub fn softtriple_loss<F: Scalar>(
    x: &Tensor<F>,
    labels: &[usize],
    centers: &ClassCenters<F>,
) -> Result<SoftTripleGrad<F>, LossError> {
    let (c, k, d) = (centers.classes(), centers.per_class(), centers.dim());
    if x.shape().len() != 2 || x.cols() != d {
        return Err(NumericError::ShapeMismatch {
            op: "softtriple_loss",
            expected: format!("[B × {d}]"),
            got: format!("{:?}", x.shape()),
        }
        .into());
    }
    let b = x.rows();
    check_labels(labels, b, c)?;
    for i in 0..b {
        check_unit(x.row(i), i)?;
    }
    let (w, norms) = centers.unit_rows();
    let (lambda, delta, gamma) = (F::c(centers.lambda), F::c(centers.delta), F::c(centers.gamma));
    let inv_b = F::one() / F::c(b as f64);

    let mut loss = F::zero();
    let mut dx = x.zeros_like();
    let mut dw = vec![F::zero(); w.len()];
    let mut z = vec![F::zero(); c];
    for (i, &y) in labels.iter().enumerate() {
        let xi = x.row(i);
        let sims = row_similarities(xi, &w, k, gamma);
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = lambda * (sims.big[j] - if j == y { delta } else { F::zero() });
        }
        let max = z.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        loss += lse - z[y];

        let dxi = dx.row_mut(i);
        for j in 0..c {
            let q = (z[j] - lse).exp();
            let g = lambda * inv_b * (q - if j == y { F::one() } else { F::zero() });
            for kk in 0..k {
                let r = j * k + kk;
                let ds = g * sims.p[r] * (F::one() + (sims.s[r] - sims.big[j]) / gamma);
                axpy(ds, &w[r * d..(r + 1) * d], dxi);
                axpy(ds, xi, &mut dw[r * d..(r + 1) * d]);
            }
        }
    }

    // Back through the per-row normalization of the centers.
    let mut dcenters = centers.centers.value.zeros_like();
    for (r, (out, (wr, dwr))) in dcenters
        .data_mut()
        .chunks_mut(d)
        .zip(w.chunks(d).zip(dw.chunks(d)))
        .enumerate()
    {
        let proj = dot(wr, dwr);
        for ((o, &wv), &g) in out.iter_mut().zip(wr).zip(dwr) {
            *o = (g - wv * proj) / norms[r];
        }
    }
    Ok(SoftTripleGrad {
        loss: loss * inv_b,
        dx,
        dcenters,
    })
}
