//! Profiled likelihood: for fixed correlation parameters the regression
//! coefficients (generalized least squares) and the process variance have
//! closed-form maximizers, leaving a function of `theta` (and the nugget).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::correlation::correlation_matrix;
use super::Basis;
use crate::error::{GsaError, Result};

/// Diagonal jitter ladder tried when the Cholesky factorization fails.
pub(crate) const JITTER_LADDER: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

/// Everything derived from `(theta, nugget)` on normalized data.
#[derive(Debug, Clone)]
pub(crate) struct Profile {
    pub raw_corr: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
    pub rinv_f: DMatrix<f64>,
    pub gram_chol: Cholesky<f64, Dyn>,
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub sigma2: f64,
    pub log_likelihood: f64,
    /// Estimated 1-norm condition number of the factorized matrix.
    pub condition: f64,
}

pub(crate) fn basis_row(basis: Basis, u: &[f64]) -> Vec<f64> {
    match basis {
        Basis::Constant => vec![1.0],
        Basis::Linear => std::iter::once(1.0).chain(u.iter().copied()).collect(),
    }
}

pub(crate) fn basis_matrix(basis: Basis, unit_inputs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = unit_inputs.nrows();
    let p = basis.size(unit_inputs.ncols());
    let mut f = DMatrix::zeros(n, p);
    for i in 0..n {
        f[(i, 0)] = 1.0;
        if basis == Basis::Linear {
            for k in 0..unit_inputs.ncols() {
                f[(i, k + 1)] = unit_inputs[(i, k)];
            }
        }
    }
    f
}

/// `(1 - tau) R + tau I`, the correlation matrix for noisy observations.
pub(crate) fn noisy_correlation(raw: &DMatrix<f64>, nugget: f64) -> DMatrix<f64> {
    if nugget == 0.0 {
        return raw.clone();
    }
    let n = raw.nrows();
    let mut r = raw * (1.0 - nugget);
    for i in 0..n {
        r[(i, i)] += nugget;
    }
    r
}

/// Cholesky factor of `m + jitter I`, escalating the jitter along
/// [`JITTER_LADDER`].
pub(crate) fn factor_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    for &jitter in &JITTER_LADDER {
        let mut a = m.clone();
        if jitter > 0.0 {
            for i in 0..a.nrows() {
                a[(i, i)] += jitter;
            }
        }
        if let Some(c) = a.cholesky() {
            return Ok((c, jitter));
        }
    }
    Err(GsaError::Conditioning(format!(
        "matrix of order {} is not positive definite with jitter {:e}",
        m.nrows(),
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Solves `m x = b` with the factor of `m`, followed by two steps of
/// iterative refinement. Smooth correlation models are badly conditioned and
/// the plain solve loses the interpolation property at the training points.
pub(crate) fn refined_solve(chol: &Cholesky<f64, Dyn>, m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = chol.solve(b);
    for _ in 0..2 {
        let r = b - m * &x;
        x += chol.solve(&r);
    }
    x
}

/// Hager's estimate of `||m||_1 ||m^-1||_1` for symmetric positive definite
/// `m`, using a handful of solves with its factor.
pub(crate) fn condition_estimate(chol: &Cholesky<f64, Dyn>, m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let norm_m = (0..n).map(|j| m.column(j).abs().sum()).fold(0.0, f64::max);
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let y = chol.solve(&x);
        est = y.abs().sum();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        // m is symmetric, so the transposed solve is the same solve.
        let z = chol.solve(&xi);
        let (j, zmax) = z.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (k, v)| {
            if v.abs() > acc.1 { (k, v.abs()) } else { acc }
        });
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[j] = 1.0;
    }
    norm_m * est
}

impl Profile {
    pub fn build(
        unit_inputs: &DMatrix<f64>,
        y: &DVector<f64>,
        theta: &[f64],
        nugget: f64,
        basis: Basis,
    ) -> Result<Profile> {
        let n = unit_inputs.nrows();
        let raw_corr = correlation_matrix(unit_inputs, theta);
        let mut factored = noisy_correlation(&raw_corr, nugget);
        let (chol, jitter) = factor_with_jitter(&factored)?;
        for i in 0..n {
            factored[(i, i)] += jitter;
        }
        let f_mat = basis_matrix(basis, unit_inputs);
        let rinv_f = chol.solve(&f_mat);
        let gram = f_mat.transpose() * &rinv_f;
        let gram_chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| GsaError::Conditioning("regression Gram matrix F^T R^-1 F is singular".into()))?;
        let rinv_y = chol.solve(y);
        let beta = gram_chol.solve(&(f_mat.transpose() * &rinv_y));
        let resid = y - &f_mat * &beta;
        let alpha = refined_solve(&chol, &factored, &resid);
        let sigma2 = (resid.dot(&alpha) / n as f64).max(0.0);
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let nf = n as f64;
        // Perfectly explained data would send the likelihood to +inf; a tiny
        // floor keeps the optimizer finite.
        let s2 = sigma2.max(1e-300);
        let log_likelihood =
            -0.5 * nf * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * log_det - 0.5 * nf;
        let condition = condition_estimate(&chol, &factored);
        Ok(Profile {
            condition,
            raw_corr,
            chol,
            jitter,
            rinv_f,
            gram_chol,
            beta,
            alpha,
            sigma2,
            log_likelihood,
        })
    }

    /// Gradient of the profiled log-likelihood with respect to `ln theta_k`
    /// (and `ln tau` as the last entry when `with_nugget`).
    pub fn log_gradient(
        &self,
        unit_inputs: &DMatrix<f64>,
        theta: &[f64],
        nugget: f64,
        with_nugget: bool,
    ) -> Vec<f64> {
        let n = unit_inputs.nrows();
        let d = theta.len();
        let s2 = self.sigma2.max(1e-300);
        // W = R^-1 - alpha alpha^T / sigma^2; dl/dp = -1/2 tr(W dR/dp).
        let mut w = self.chol.inverse();
        for j in 0..n {
            let aj = self.alpha[j] / s2;
            for i in 0..n {
                w[(i, j)] -= self.alpha[i] * aj;
            }
        }
        let mut grad = vec![0.0; d + usize::from(with_nugget)];
        // Off-diagonal pairs only: dR/dtheta vanishes on the diagonal.
        for j in 0..n {
            for i in (j + 1)..n {
                let wr = 2.0 * w[(i, j)] * self.raw_corr[(i, j)];
                for (k, g) in grad.iter_mut().enumerate().take(d) {
                    let diff = unit_inputs[(i, k)] - unit_inputs[(j, k)];
                    *g += wr * diff * diff;
                }
            }
        }
        for k in 0..d {
            grad[k] *= 0.5 * (1.0 - nugget) * theta[k];
        }
        if with_nugget {
            // dR_n/dtau = I - R
            let mut tr = 0.0;
            for j in 0..n {
                for i in 0..n {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    tr += w[(i, j)] * (delta - self.raw_corr[(i, j)]);
                }
            }
            grad[d] = -0.5 * tr * nugget;
        }
        grad
    }
}
