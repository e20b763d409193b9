//! Central finite differences, used as an independent oracle for every
//! analytic backward rule in the crate.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Default step for 64-bit central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of comparing an analytic gradient against a numeric one.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_abs_error: f64,
    /// `|a - n| / max(|a|, |n|)`, zero where both are zero.
    pub max_rel_error: f64,
    /// Coordinate with the largest violation of `|a - n| ≤ atol + rtol·|n|`.
    pub worst_coordinate: [usize; 4],
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub passed: bool,
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} max_abs={:.3e} max_rel={:.3e} worst={:?} (rtol={:e}, atol={:e})",
            if self.passed { "pass" } else { "FAIL" },
            self.max_abs_error,
            self.max_rel_error,
            self.worst_coordinate,
            self.rtol,
            self.atol
        )
    }
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate `i`.
pub fn finite_difference<F>(mut f: F, x: &Tensor4, step: f64) -> Result<Tensor4>
where
    F: FnMut(&Tensor4) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor4::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite(format!(
                "objective is {plus} / {minus} at coordinate {:?}",
                x.shape().unflatten(i)
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Elementwise comparison; passes iff `|a − n| ≤ atol + rtol·|n|` everywhere.
pub fn compare(analytic: &Tensor4, numeric: &Tensor4, rtol: f64, atol: f64) -> Result<GradReport> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::Usage(format!(
            "cannot compare gradients of shapes {} and {}",
            analytic.shape(),
            numeric.shape()
        )));
    }
    let mut report = GradReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        worst_coordinate: [0; 4],
        step: DEFAULT_STEP,
        rtol,
        atol,
        passed: true,
    };
    let mut worst_excess = f64::NEG_INFINITY;
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let abs = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale == 0.0 { 0.0 } else { abs / scale };
        let excess = abs - (atol + rtol * n.abs());
        report.max_abs_error = report.max_abs_error.max(abs);
        report.max_rel_error = report.max_rel_error.max(rel);
        if excess > worst_excess || abs.is_nan() {
            worst_excess = if abs.is_nan() { f64::INFINITY } else { excess };
            report.worst_coordinate = analytic.shape().unflatten(i);
        }
        if excess.is_nan() || excess > 0.0 {
            report.passed = false;
        }
    }
    Ok(report)
}

/// Finite-difference oracle plus comparison in one call.
pub fn check<F>(f: F, x: &Tensor4, analytic: &Tensor4, rtol: f64, atol: f64) -> Result<GradReport>
where
    F: FnMut(&Tensor4) -> f64,
{
    let numeric = finite_difference(f, x, DEFAULT_STEP)?;
    compare(analytic, &numeric, rtol, atol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn sample() -> Tensor4 {
        Tensor4::from_fn(Shape4::new(2, 3, 2, 1), |[n, c, h, _]| (n as f64 - 0.7) * (c as f64 + 0.3) + h as f64)
    }

    #[test]
    fn sum_has_unit_gradient() {
        let g = finite_difference(|t| t.sum(), &sample(), DEFAULT_STEP).unwrap();
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn central_difference_is_exact_on_quadratics() {
        let x = sample();
        let g = finite_difference(|t| 0.5 * t.data().iter().map(|v| v * v).sum::<f64>(), &x, DEFAULT_STEP).unwrap();
        assert!(g.max_abs_diff(&x).unwrap() < 1e-7);
        // affine-plus-quadratic with cross terms
        let g = finite_difference(
            |t| {
                let d = t.data();
                3.0 * d[0] * d[1] - d[2] * d[2] + 2.0 * d[3] + 1.0
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        let d = x.data();
        let expected = [3.0 * d[1], 3.0 * d[0], -2.0 * d[2], 2.0, 0.0, 0.0];
        for (a, b) in g.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_objective_reported() {
        let err = finite_difference(|t| 1.0 / (t.data()[0] - t.data()[0]), &sample(), DEFAULT_STEP).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert!(finite_difference(|t| t.sum(), &sample(), 0.0).is_err());
    }

    #[test]
    fn identical_tensors_pass_with_zero_error() {
        let x = sample();
        let r = compare(&x, &x, 0.0, 0.0).unwrap();
        assert!(r.passed);
        assert_eq!((r.max_abs_error, r.max_rel_error), (0.0, 0.0));
    }

    #[test]
    fn absolute_tolerance_boundary() {
        let numeric = sample();
        let atol = 1e-3;
        let analytic = numeric.map(|v| v + atol / 2.0);
        assert!(compare(&analytic, &numeric, 0.0, atol).unwrap().passed);
        let analytic = numeric.map(|v| v + 2.0 * atol);
        assert!(!compare(&analytic, &numeric, 0.0, atol).unwrap().passed);
    }

    #[test]
    fn poisoned_coordinate_is_located() {
        let numeric = sample();
        let mut analytic = numeric.clone();
        analytic.set([1, 2, 0, 0], 100.0);
        let r = compare(&analytic, &numeric, 1e-4, 1e-7).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_coordinate, [1, 2, 0, 0]);
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let a = Tensor4::zeros(Shape4::nc(2, 3));
        let b = Tensor4::zeros(Shape4::nc(3, 2));
        assert!(matches!(compare(&a, &b, 0.0, 0.0), Err(Error::Usage(_))));
    }
}
