//! Class-balanced focal loss over frame logits, skipping `-1` frames.

use crate::numcore::{Matrix, Real, Tape, Var};
use crate::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_BETA: f64 = 0.999;
/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-class loss multipliers normalized to mean 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub beta: f64,
    pub counts: Vec<u64>,
}

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        Self {
            weights: vec![1.0; n_classes],
            beta: 0.0,
            counts: vec![0; n_classes],
        }
    }

    pub fn as_vec<T: Real>(&self) -> Vec<T> {
        self.weights.iter().map(|&w| T::lit(w)).collect()
    }
}

/// Effective-number weights: `raw_c = (1 − β) / (1 − β^{n_c})`, rescaled so
/// the weights sum to the class count.
pub fn effective_number_weights(counts: &[u64], beta: f64) -> Result<ClassWeights> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must be in [0, 1), got {beta}")));
    }
    if counts.is_empty() {
        return Err(Error::Config("no classes to weight".into()));
    }
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::ZeroCount { class });
    }
    let raw: Vec<f64> = counts
        .iter()
        .map(|&n| (1.0 - beta) / (1.0 - beta.powf(n as f64)))
        .collect();
    let total: f64 = raw.iter().sum();
    let k = counts.len() as f64;
    Ok(ClassWeights {
        weights: raw.iter().map(|r| r * k / total).collect(),
        beta,
        counts: counts.to_vec(),
    })
}

/// Loss value and gradient with respect to the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput<T> {
    pub loss: T,
    pub grad: Matrix<T>,
    pub valid_frames: usize,
}

/// `scale · Σ_valid −w_y (1 − p_t)^γ log p_t` and its logit gradient.
///
/// Frames labelled `-1` contribute nothing. `scale` is the caller's
/// normalizer, typically one over the number of valid frames in the batch.
pub fn focal_sum<T: Real>(logits: &Matrix<T>, labels: &[i8], weights: &[T], gamma: T, scale: T) -> Result<LossOutput<T>> {
    if labels.len() != logits.rows() {
        return Err(Error::Length {
            what: "labels/logits",
            left: labels.len(),
            right: logits.rows(),
        });
    }
    let k = logits.cols();
    if weights.len() != k {
        return Err(Error::Length {
            what: "class weights/logit columns",
            left: weights.len(),
            right: k,
        });
    }
    let log_floor = T::lit(PROB_FLOOR.ln());
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(logits.rows(), k);
    let mut valid = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if label < 0 {
            continue;
        }
        let y = label as usize;
        if y >= k {
            return Err(Error::Config(format!("label {label} at frame {i} has no logit column")));
        }
        valid += 1;
        let z = logits.row(i);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let log_p = z[y] - lse;
        let p = log_p.exp();
        let one_minus_p = -log_p.exp_m1();
        let clamped = log_p < log_floor;
        let log_term = if clamped { log_floor } else { log_p };
        let w = weights[y];

        let modulator = if gamma == T::zero() { T::one() } else { one_minus_p.powf(gamma) };
        loss += -w * modulator * log_term;

        // p · d(term)/dp
        let focus = if gamma == T::zero() || one_minus_p <= T::zero() {
            T::zero()
        } else {
            gamma * p * one_minus_p.powf(gamma - T::one()) * log_term
        };
        let direct = if clamped { T::zero() } else { modulator };
        let g = w * (focus - direct) * scale;
        let row = grad.row_mut(i);
        for (j, out) in row.iter_mut().enumerate() {
            let pj = (z[j] - lse).exp();
            let indicator = if j == y { T::one() } else { T::zero() };
            *out = g * (indicator - pj);
        }
    }
    Ok(LossOutput {
        loss: loss * scale,
        grad,
        valid_frames: valid,
    })
}

/// Focal loss averaged over the valid frames of `labels`.
pub fn focal_loss<T: Real>(logits: &Matrix<T>, labels: &[i8], weights: &[T], gamma: T) -> Result<LossOutput<T>> {
    let valid = labels.iter().filter(|&&l| l >= 0).count();
    if valid == 0 {
        return Err(Error::AllInvalid);
    }
    focal_sum(logits, labels, weights, gamma, T::one() / T::lit(valid as f64))
}

/// Weighted cross-entropy: the `γ = 0` case.
pub fn cross_entropy<T: Real>(logits: &Matrix<T>, labels: &[i8], weights: &[T]) -> Result<LossOutput<T>> {
    focal_loss(logits, labels, weights, T::zero())
}

/// Records the focal term of `logits` on the tape as a scalar node.
pub fn focal_on_tape<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[i8], weights: &[T], gamma: T, scale: T) -> Result<Var> {
    let out = focal_sum(tape.value(logits), labels, weights, gamma, scale)?;
    Ok(tape.scalar_fn(logits, out.loss, out.grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_counts_give_unit_weights() {
        let w = effective_number_weights(&[50; 8], 0.999).unwrap();
        assert!(w.weights.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn beta_zero_is_uniform() {
        let w = effective_number_weights(&[1, 5, 900, 3, 3, 3, 3, 3], 0.0).unwrap();
        assert!(w.weights.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_class_weights() {
        let w = effective_number_weights(&[1, 10], 0.9).unwrap();
        assert!((w.weights[0] - 1.7338).abs() < 1e-3);
        assert!((w.weights[1] - 0.2662).abs() < 1e-3);
    }

    #[test]
    fn zero_count_is_an_error() {
        assert!(matches!(
            effective_number_weights(&[3, 0, 2], 0.9),
            Err(Error::ZeroCount { class: 1 })
        ));
    }

    #[test]
    fn weights_decrease_with_count() {
        let w = effective_number_weights(&[1, 2, 10, 100, 1000, 5000, 20000, 90000], 0.999).unwrap();
        assert!(w.weights.windows(2).all(|p| p[0] >= p[1]));
        assert!((w.weights.iter().sum::<f64>() - 8.0).abs() < 1e-9);
    }

    #[test]
    fn confident_correct_frames_cost_nothing() {
        let logits = Matrix::<f64>::from_rows(&[[800.0, 0.0, 0.0], [0.0, 0.0, 900.0]]);
        let out = focal_loss(&logits, &[0, 2], &[1.0; 3], 2.0).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn half_probability_single_frame() {
        let logits = Matrix::<f64>::from_rows(&[[0.0, 0.0]]);
        let out = focal_loss(&logits, &[1], &[1.0; 2], 2.0).unwrap();
        assert!((out.loss - 0.25 * 2f64.ln()).abs() < 1e-9);
        assert!((out.loss - 0.173287).abs() < 1e-6);
    }

    #[test]
    fn all_invalid_is_an_error() {
        let logits = Matrix::<f64>::zeros(3, 8);
        assert!(matches!(focal_loss(&logits, &[-1; 3], &[1.0; 8], 2.0), Err(Error::AllInvalid)));
    }

    #[test]
    fn confident_wrong_prediction_stays_finite() {
        let logits = Matrix::<f32>::from_rows(&[[0.0, 1e4]]);
        let out = focal_loss(&logits, &[0], &[1.0; 2], 2.0).unwrap();
        assert!(out.loss.is_finite() && out.grad.is_finite());
        assert!((out.loss - (-(1e-12f32).ln())).abs() < 1e-3);
    }
}
