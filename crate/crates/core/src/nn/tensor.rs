//! Dense row-major tensors and the handful of matrix kernels the layers use.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use super::NumericError;

/// Floating point element type. Training runs in `f32`; `f64` is the
/// shadow precision used by gradient checks.
pub trait Scalar:
    Float
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    fn c(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn c(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self, NumericError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericError::ShapeMismatch {
                op: "from_vec",
                expected: format!("{n} elements for {shape:?}"),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a `[rows.len() × width]` matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self, NumericError> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(NumericError::ShapeMismatch {
                    op: "from_rows",
                    expected: format!("rows of width {width}"),
                    got: format!("row of width {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(&[rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NumericError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NumericError::ShapeMismatch {
                op: "reshape",
                expected: format!("{} elements", self.data.len()),
                got: format!("{shape:?}"),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| G::c(x.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn fill(&mut self, value: F) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn scale(&mut self, s: F) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), NumericError> {
        self.check_same("add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Sum of squares.
    pub fn sq_norm(&self) -> F {
        self.data.iter().map(|&x| x * x).sum()
    }

    fn check_same(&self, op: &'static str, other: &Self) -> Result<(), NumericError> {
        if self.shape != other.shape {
            return Err(NumericError::ShapeMismatch {
                op,
                expected: format!("{:?}", self.shape),
                got: format!("{:?}", other.shape),
            });
        }
        Ok(())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize), NumericError> {
        if self.shape.len() != 2 {
            return Err(NumericError::ShapeMismatch {
                op,
                expected: "rank-2 tensor".into(),
                got: format!("{:?}", self.shape),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self · other` for `[m×k] · [k×n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self, NumericError> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                expected: format!("inner dim {k}"),
                got: format!("{k2}"),
            });
        }
        let mut out = Self::zeros(&[m, n]);
        gemm_nn(&self.data, &other.data, &mut out.data, m, k, n);
        Ok(out)
    }

    /// `selfᵀ · other` for `[k×m]ᵀ · [k×n]`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self, NumericError> {
        let (k, m) = self.dims2("matmul_tn")?;
        let (k2, n) = other.dims2("matmul_tn")?;
        if k != k2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul_tn",
                expected: format!("leading dim {k}"),
                got: format!("{k2}"),
            });
        }
        let mut out = Self::zeros(&[m, n]);
        gemm_tn(&self.data, &other.data, &mut out.data, k, m, n);
        Ok(out)
    }

    /// `self · otherᵀ` for `[m×k] · [n×k]ᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self, NumericError> {
        let (m, k) = self.dims2("matmul_nt")?;
        let (n, k2) = other.dims2("matmul_nt")?;
        if k != k2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul_nt",
                expected: format!("trailing dim {k}"),
                got: format!("{k2}"),
            });
        }
        let mut out = Self::zeros(&[m, n]);
        gemm_nt(&self.data, &other.data, &mut out.data, m, k, n);
        Ok(out)
    }
}

#[inline]
pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `y += alpha · x`
#[inline]
pub(crate) fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c += a · b`, `a: [m×k]`, `b: [k×n]`.
pub(crate) fn gemm_nn<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip != F::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], ci);
            }
        }
    }
}

/// `c += aᵀ · b`, `a: [k×m]`, `b: [k×n]`.
pub(crate) fn gemm_tn<F: Scalar>(a: &[F], b: &[F], c: &mut [F], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let bp = &b[p * n..(p + 1) * n];
        for (i, &api) in a[p * m..(p + 1) * m].iter().enumerate() {
            if api != F::zero() {
                axpy(api, bp, &mut c[i * n..(i + 1) * n]);
            }
        }
    }
}

/// `c += a · bᵀ`, `a: [m×k]`, `b: [n×k]`.
pub(crate) fn gemm_nt<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(ai, &b[j * k..(j + 1) * k]);
        }
    }
}
