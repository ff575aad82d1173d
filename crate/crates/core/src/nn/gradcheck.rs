use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumericError, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Relative-error denominators are clamped from below at this value.
    pub denom_floor: f64,
    /// Check at most this many coordinates per tensor (sampled), `None` = all.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
    /// Combine central differences at `eps` and `eps/2` as
    /// `(4·D(eps/2) − D(eps)) / 3`, cancelling the `eps²` error term.
    pub richardson: bool,
}

impl GradCheckOptions {
    /// Step suited to evaluating the loss in `f32`.
    pub fn float32() -> Self {
        Self {
            eps: 1e-3,
            denom_floor: 1e-8,
            max_coords_per_tensor: None,
            seed: 0,
            richardson: false,
        }
    }

    /// Step suited to the `f64` shadow.
    pub fn float64() -> Self {
        Self {
            eps: 1e-5,
            ..Self::float32()
        }
    }

    pub fn with_max_coords(mut self, n: usize) -> Self {
        self.max_coords_per_tensor = Some(n);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `f64` shadow with Richardson extrapolation at step 1e-3, accurate
    /// enough to resolve both tiny and strongly curved coordinates.
    pub fn float64_extrapolated() -> Self {
        Self {
            eps: 1e-3,
            richardson: true,
            ..Self::float32()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(tensor index, flat coordinate)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compares `analytic` gradients against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` of `loss` evaluated at `values`.
///
/// The analytic gradients may come from a different precision than the
/// values, which is how `f32` gradients are checked against an `f64` shadow
/// evaluation of the same function. Relative error per coordinate is
/// `|a − n| / max(|a|, |n|, denom_floor)`.
pub fn grad_check<F: Scalar, G: Scalar>(
    values: &mut [Tensor<F>],
    analytic: &[Tensor<G>],
    opts: &GradCheckOptions,
    mut loss: impl FnMut(&[Tensor<F>]) -> F,
) -> Result<GradCheckReport, NumericError> {
    if values.len() != analytic.len() {
        return Err(NumericError::ShapeMismatch {
            op: "grad_check",
            expected: format!("{} gradient tensors", values.len()),
            got: format!("{}", analytic.len()),
        });
    }
    for (v, a) in values.iter().zip(analytic) {
        if v.shape() != a.shape() {
            return Err(NumericError::ShapeMismatch {
                op: "grad_check",
                expected: format!("{:?}", v.shape()),
                got: format!("{:?}", a.shape()),
            });
        }
    }
    let base = loss(values);
    if !base.is_finite() {
        return Err(NumericError::NonFiniteLoss("loss at the unperturbed point".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut central = |values: &mut [Tensor<F>], ti: usize, ci: usize, step: f64| {
        let orig = values[ti].data()[ci];
        values[ti].data_mut()[ci] = orig + F::c(step);
        let up = loss(values);
        values[ti].data_mut()[ci] = orig - F::c(step);
        let down = loss(values);
        values[ti].data_mut()[ci] = orig;
        (up.as_f64() - down.as_f64()) / (2.0 * step)
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    for ti in 0..values.len() {
        let n = values[ti].len();
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for ci in coords {
            let mut numeric = central(values, ti, ci, opts.eps);
            if opts.richardson {
                numeric = (4.0 * central(values, ti, ci, opts.eps / 2.0) - numeric) / 3.0;
            }
            if !numeric.is_finite() {
                return Err(NumericError::NonFiniteLoss(format!(
                    "finite difference at tensor {ti}, coordinate {ci} (eps = {})",
                    opts.eps
                )));
            }
            let a = analytic[ti].data()[ci].as_f64();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.denom_floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((ti, ci));
            }
        }
    }
    Ok(report)
}
