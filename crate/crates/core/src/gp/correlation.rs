use nalgebra::DMatrix;

use crate::error::{GsaError, Result};

/// Anisotropic Gaussian correlation `prod_k exp(-theta_k |x1_k - x2_k|^2)`.
///
/// ```
/// let r = gsax::gp::gaussian_correlation(&[0.0, 0.0], &[1.0, 1.0], &[2.0, 3.0]).unwrap();
/// assert!((r - (-5.0f64).exp()).abs() < 1e-15);
/// ```
pub fn gaussian_correlation(x1: &[f64], x2: &[f64], theta: &[f64]) -> Result<f64> {
    if x1.len() != theta.len() || x2.len() != theta.len() {
        return Err(GsaError::invalid(format!(
            "dimension mismatch: x1 {}, x2 {}, theta {}",
            x1.len(),
            x2.len(),
            theta.len()
        )));
    }
    if let Some(t) = theta.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(GsaError::invalid(format!("theta must be positive, got {t}")));
    }
    Ok(correlation_unchecked(x1, x2, theta))
}

/// Same as [`gaussian_correlation`] without argument validation. The
/// exponent is accumulated in the order of the dimensions so the value is
/// symmetric in its two arguments bit-for-bit.
#[inline]
pub(crate) fn correlation_unchecked(x1: &[f64], x2: &[f64], theta: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..theta.len() {
        let d = x1[k] - x2[k];
        s += theta[k] * d * d;
    }
    (-s).exp()
}

/// Correlation matrix of the rows of `points` (no nugget, no jitter).
pub(crate) fn correlation_matrix(points: &DMatrix<f64>, theta: &[f64]) -> DMatrix<f64> {
    let n = points.nrows();
    let d = points.ncols();
    let mut r = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in 0..d {
                let diff = points[(i, k)] - points[(j, k)];
                s += theta[k] * diff * diff;
            }
            let v = (-s).exp();
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}
