//! Central finite-difference verification of analytic gradients.

use super::matrix::Matrix;
use super::NumError;

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over the checked coordinates.
    pub max_rel_error: f64,
    /// Flattened index of the coordinate with the largest error.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks every coordinate of `input`.
///
/// `f` returns the scalar value and its analytic gradient (same shape as the
/// input).
pub fn grad_check<F>(f: F, input: &Matrix<f64>, step: f64) -> Result<GradCheckReport, NumError>
where
    F: FnMut(&Matrix<f64>) -> (f64, Matrix<f64>),
{
    let coords: Vec<usize> = (0..input.len()).collect();
    grad_check_at(f, input, step, &coords)
}

/// Like [`grad_check`] but only perturbs the listed flattened coordinates.
pub fn grad_check_at<F>(mut f: F, input: &Matrix<f64>, step: f64, coords: &[usize]) -> Result<GradCheckReport, NumError>
where
    F: FnMut(&Matrix<f64>) -> (f64, Matrix<f64>),
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(NumError::InvalidArgument(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }
    let (_, analytic) = f(input);
    if analytic.shape() != input.shape() {
        return Err(NumError::Dimension {
            op: "grad_check",
            left: input.shape(),
            right: analytic.shape(),
        });
    }
    if let Some(index) = analytic.data().iter().position(|g| !g.is_finite()) {
        return Err(NumError::NonFiniteGradient { index });
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    let mut probe = input.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let (plus, _) = f(&probe);
        probe.data_mut()[i] = orig - step;
        let (minus, _) = f(&probe);
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        let r = grad_check(|m| (m.data().iter().map(|v| v * v).sum(), m.map(|v| 2.0 * v)), &x, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.checked, 2);
    }

    #[test]
    fn constant_function() {
        let x = Matrix::from_rows(&[[3.0, -1.0, 0.5]]);
        let r = grad_check(|m| (7.0, Matrix::zeros(m.rows(), m.cols())), &x, 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_gradient_reports_coordinate() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]);
        let err = grad_check(
            |_| (0.0, Matrix::from_rows(&[[0.0, f64::NAN, 0.0]])),
            &x,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, NumError::NonFiniteGradient { index: 1 }));
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        let r = grad_check(|m| (m.data().iter().map(|v| v * v).sum(), m.map(|v| 3.0 * v)), &x, 1e-5).unwrap();
        assert!(r.max_rel_error > 0.3);
    }

    #[test]
    fn step_out_of_range_rejected() {
        let x = Matrix::from_rows(&[[1.0]]);
        assert!(grad_check(|m| (0.0, m.clone()), &x, 1e-2).is_err());
    }
}
