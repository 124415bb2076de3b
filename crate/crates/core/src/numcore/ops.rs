//! Value-level primitives. The tape in [`super::tape`] records the same
//! computations and adds their reverse-mode rules.

use super::matrix::{matmul_acc, Matrix, Real};
use super::NumError;

/// Epsilon used by every layer normalization in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `x · weight + bias`, with `bias` broadcast over rows.
pub fn affine<T: Real>(x: &Matrix<T>, weight: &Matrix<T>, bias: &[T]) -> Result<Matrix<T>, NumError> {
    if x.cols() != weight.rows() {
        return Err(NumError::Dimension {
            op: "affine",
            left: x.shape(),
            right: weight.shape(),
        });
    }
    if bias.len() != weight.cols() {
        return Err(NumError::Dimension {
            op: "affine bias",
            left: weight.shape(),
            right: (1, bias.len()),
        });
    }
    let mut out = Matrix::zeros(x.rows(), weight.cols());
    for r in 0..out.rows() {
        out.row_mut(r).copy_from_slice(bias);
    }
    matmul_acc(x, weight, &mut out);
    Ok(out)
}

/// Row-wise softmax restricted to the keys where `key_mask` is true.
///
/// Masked positions get probability exactly zero. If no key is unmasked the
/// result is [`NumError::AllMasked`]; callers decide how to degrade.
pub fn masked_softmax<T: Real>(scores: &Matrix<T>, key_mask: &[bool]) -> Result<Matrix<T>, NumError> {
    if key_mask.len() != scores.cols() {
        return Err(NumError::Dimension {
            op: "masked_softmax",
            left: scores.shape(),
            right: (1, key_mask.len()),
        });
    }
    if !key_mask.iter().any(|&m| m) {
        return Err(NumError::AllMasked);
    }
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        softmax_row(scores.row(r), key_mask, out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_row<T: Real>(scores: &[T], mask: &[bool], out: &mut [T]) {
    let mut max = T::neg_infinity();
    for (&s, &m) in scores.iter().zip(mask) {
        if m && s > max {
            max = s;
        }
    }
    let mut total = T::zero();
    for ((o, &s), &m) in out.iter_mut().zip(scores).zip(mask) {
        *o = if m { (s - max).exp() } else { T::zero() };
        total += *o;
    }
    let inv = T::one() / total;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Per-row statistics produced by layer normalization, kept for the
/// backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub normalized: Matrix<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes each row to zero mean and unit variance, then applies
/// `gain` and `shift`.
pub fn layer_norm<T: Real>(x: &Matrix<T>, gain: &[T], shift: &[T], eps: T) -> Result<Matrix<T>, NumError> {
    layer_norm_with_cache(x, gain, shift, eps).map(|(y, _)| y)
}

pub(crate) fn layer_norm_with_cache<T: Real>(
    x: &Matrix<T>,
    gain: &[T],
    shift: &[T],
    eps: T,
) -> Result<(Matrix<T>, LayerNormCache<T>), NumError> {
    let d = x.cols();
    if gain.len() != d || shift.len() != d {
        return Err(NumError::Dimension {
            op: "layer_norm",
            left: x.shape(),
            right: (gain.len(), shift.len()),
        });
    }
    if d == 0 {
        return Err(NumError::InvalidArgument("layer_norm needs at least one column".into()));
    }
    let n = T::lit(d as f64);
    let mut y = Matrix::zeros(x.rows(), d);
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let istd = T::one() / (var + eps).sqrt();
        inv_std.push(istd);
        let xhat = normalized.row_mut(r);
        for (h, &v) in xhat.iter_mut().zip(row) {
            *h = (v - mean) * istd;
        }
        let out = y.row_mut(r);
        for j in 0..d {
            out[j] = normalized.get(r, j) * gain[j] + shift[j];
        }
    }
    Ok((y, LayerNormCache { normalized, inv_std }))
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * sech2 * c * (T::one() + T::lit(3.0) * a * x * x)
}
