//! Main-effect and interaction-effect processes of a fitted Kriging model.
//!
//! Averaging the posterior process over some of its inputs (independent
//! uniforms) gives another Gaussian process. With the Gaussian correlation
//! and a constant or linear trend, every integral factorizes into the
//! one-dimensional kernel integrals [`kernel_integral_1d`] and
//! [`kernel_integral_2d`], so mean and covariance are available in closed
//! form. The work happens in the model's normalized coordinates, where each
//! input is uniform on `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GsaError, Result};
use crate::gp::{basis_row, clamp_variance, GpModel};
use crate::special::erf_diff;

/// Default number of grid points per main effect.
pub const DEFAULT_GRID_SIZE: usize = 128;

/// Diagonal jitter ladder for covariance repair, relative to the process
/// variance.
const PSD_JITTER: [f64; 8] = [0.0, 1e-16, 1e-15, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10];

fn check_kernel_args(theta: f64, a: f64, b: f64) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(GsaError::invalid(format!("theta must be positive, got {theta}")));
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(GsaError::invalid(format!("need a < b, got [{a}, {b}]")));
    }
    Ok(())
}

/// Average of `exp(-theta (x - t)^2)` over `x ~ U(a, b)`.
///
/// ```
/// use gsax::marginal::kernel_integral_1d;
///
/// // A nearly flat kernel averages to one.
/// let v = kernel_integral_1d(1e-10, 0.5, 0.0, 1.0).unwrap();
/// assert!((v - 1.0).abs() < 1e-6);
/// ```
pub fn kernel_integral_1d(theta: f64, t: f64, a: f64, b: f64) -> Result<f64> {
    check_kernel_args(theta, a, b)?;
    Ok(k1(theta, t, a, b))
}

fn k1(theta: f64, t: f64, a: f64, b: f64) -> f64 {
    let s = theta.sqrt();
    // (1/L) sqrt(pi/theta) [Phi(sqrt(2 theta)(b - t)) - Phi(sqrt(2 theta)(a - t))]
    0.5 * (std::f64::consts::PI / theta).sqrt() * erf_diff(s * (b - t), s * (a - t)) / (b - a)
}

/// Average of `exp(-theta (x1 - x2)^2)` over independent `x1, x2 ~ U(a, b)`.
/// Depends on the interval only through its length.
pub fn kernel_integral_2d(theta: f64, a: f64, b: f64) -> Result<f64> {
    check_kernel_args(theta, a, b)?;
    Ok(k2(theta, b - a))
}

fn k2(theta: f64, len: f64) -> f64 {
    // With z = sqrt(theta) L the value is
    // (sqrt(pi) z erf(z) - (1 - exp(-z^2))) / z^2.
    let z = theta.sqrt() * len;
    if z < 1e-4 {
        return 1.0 - z * z / 6.0 + z.powi(4) / 30.0;
    }
    let pi_sqrt = std::f64::consts::PI.sqrt();
    (pi_sqrt * z * libm::erf(z) + (-z * z).exp_m1()) / (z * z)
}

/// `n` equally spaced points covering `[lower_i, upper_i]`, endpoints
/// included.
pub fn uniform_grid(model: &GpModel, i: usize, n: usize) -> Result<Vec<f64>> {
    if i >= model.dim() {
        return Err(GsaError::invalid(format!("dimension {i} out of range for a {}-d model", model.dim())));
    }
    if n < 2 {
        return Err(GsaError::invalid("a grid needs at least two points"));
    }
    let b = model.bounds();
    Ok((0..n)
        .map(|k| b.from_unit_coord(i, k as f64 / (n - 1) as f64))
        .collect())
}

/// Covariance matrix after symmetrization and the smallest diagonal jitter
/// that makes it factorizable.
#[derive(Debug, Clone)]
pub struct RepairedCovariance {
    matrix: DMatrix<f64>,
    jitter: f64,
    factor: DMatrix<f64>,
}

impl RepairedCovariance {
    /// The symmetrized matrix, jitter included.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Diagonal jitter that was added (original output units squared).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower Cholesky factor `L` with `L L^T = matrix()`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Builds the repaired form of a covariance matrix whose natural scale is
    /// `scale`. Fails if jitter `1e-10 * scale` is not enough.
    pub fn repair(c: DMatrix<f64>, scale: f64) -> Result<Self> {
        if !c.is_square() {
            return Err(GsaError::invalid("covariance matrix must be square"));
        }
        let mut sym = (&c + c.transpose()) * 0.5;
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let mut added = 0.0;
        for rel in PSD_JITTER {
            let jitter = rel * scale;
            for k in 0..sym.nrows() {
                sym[(k, k)] += jitter - added;
            }
            added = jitter;
            if let Some(ch) = sym.clone().cholesky() {
                return Ok(RepairedCovariance { factor: ch.unpack(), matrix: sym, jitter });
            }
        }
        Err(GsaError::Conditioning(format!(
            "covariance of order {} is not positive semi-definite within jitter {:e}",
            c.nrows(),
            PSD_JITTER[PSD_JITTER.len() - 1] * scale
        )))
    }
}

/// Main-effect process of one input on a grid, original units.
#[derive(Debug, Clone)]
pub struct MainEffectGp {
    pub dim: usize,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov: RepairedCovariance,
}

/// Interaction-effect process of a subset of inputs, original units.
#[derive(Debug, Clone)]
pub struct InteractionEffectGp {
    pub dims: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub cov: RepairedCovariance,
}

/// Precomputed pieces for averaging a model over the inputs not in `kept`.
pub(crate) struct Marginalizer<'a> {
    model: &'a GpModel,
    kept: Vec<usize>,
    /// Per training point, the product of 1-d kernel averages over the
    /// averaged-out inputs.
    weights: Vec<f64>,
    /// Product of 2-d kernel averages over the averaged-out inputs.
    prior_factor: f64,
}

impl<'a> Marginalizer<'a> {
    pub fn new(model: &'a GpModel, kept: &[usize]) -> Result<Self> {
        let d = model.dim();
        if kept.is_empty() {
            return Err(GsaError::invalid("the retained index set must not be empty"));
        }
        let mut sorted = kept.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != kept.len() || sorted[sorted.len() - 1] >= d {
            return Err(GsaError::invalid(format!("invalid index set {kept:?} for a {d}-d model")));
        }
        let theta = model.theta();
        let u = model.unit_inputs();
        let dropped: Vec<usize> = (0..d).filter(|j| !kept.contains(j)).collect();
        let weights = (0..u.nrows())
            .map(|l| dropped.iter().map(|&j| k1(theta[j], u[(l, j)], 0.0, 1.0)).product())
            .collect();
        let prior_factor = dropped.iter().map(|&j| k2(theta[j], 1.0)).product();
        Ok(Marginalizer { model, kept: kept.to_vec(), weights, prior_factor })
    }

    /// Maps retained coordinates (original units) to the unit cube.
    pub fn to_unit(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.kept.len() {
            return Err(GsaError::invalid(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.kept.len()
            )));
        }
        let b = self.model.bounds();
        let mut u = Vec::with_capacity(x.len());
        for (v, &k) in x.iter().zip(&self.kept) {
            let w = b.to_unit_coord(k, *v);
            if !(-1e-12..=1.0 + 1e-12).contains(&w) {
                return Err(GsaError::invalid(format!("coordinate {v} outside bounds of input {k}")));
            }
            u.push(w);
        }
        Ok(u)
    }

    fn kept_correlation(&self, u: &[f64], l: usize) -> f64 {
        let theta = self.model.theta();
        let ui = self.model.unit_inputs();
        let mut s = 0.0;
        for (c, &k) in self.kept.iter().enumerate() {
            let diff = u[c] - ui[(l, k)];
            s += theta[k] * diff * diff;
        }
        (-s).exp()
    }

    /// Averaged correlation vector between the process at `u` and the
    /// training outputs.
    fn r_vector(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.weights.len(), |l, _| self.kept_correlation(u, l) * self.weights[l])
    }

    /// Averaged regression row: unit means 1/2 for the averaged-out inputs.
    fn f_vector(&self, u: &[f64]) -> DVector<f64> {
        let d = self.model.dim();
        match self.model.basis() {
            crate::gp::Basis::Constant => DVector::from_element(1, 1.0),
            crate::gp::Basis::Linear => {
                let mut f = DVector::from_element(d + 1, 0.5);
                f[0] = 1.0;
                for (c, &k) in self.kept.iter().enumerate() {
                    f[k + 1] = u[c];
                }
                f
            }
        }
    }

    /// Mean at a unit point, original units.
    pub fn mean_unit(&self, u: &[f64]) -> f64 {
        let beta = self.model.beta_vec();
        let alpha = self.model.alpha();
        let mut m = self.f_vector(u).dot(beta);
        for l in 0..self.weights.len() {
            m += self.kept_correlation(u, l) * self.weights[l] * alpha[l];
        }
        self.model.output_mean() + self.model.output_scale() * m
    }

    fn prior(&self, u: &[f64], v: &[f64]) -> f64 {
        let theta = self.model.theta();
        let mut s = 0.0;
        for (c, &k) in self.kept.iter().enumerate() {
            let diff = u[c] - v[c];
            s += theta[k] * diff * diff;
        }
        (-s).exp() * self.prior_factor
    }

    /// Columns `R^-1 r(u_k)` and `F^T R^-1 r(u_k) - f(u_k)` for every point.
    fn solved(&self, units: &[Vec<f64>]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.weights.len();
        let g = units.len();
        let mut m = DMatrix::zeros(n, g);
        let p = self.model.basis().size(self.model.dim());
        let mut fbar = DMatrix::zeros(p, g);
        for (k, u) in units.iter().enumerate() {
            m.set_column(k, &self.r_vector(u));
            fbar.set_column(k, &self.f_vector(u));
        }
        let rinv_m = self.model.chol().solve(&m);
        let t = self.model.rinv_f().transpose() * &m - fbar;
        (m, rinv_m, t)
    }

    /// Full covariance on the points (original units), unrepaired.
    pub fn covariance_unit(&self, units: &[Vec<f64>]) -> DMatrix<f64> {
        let g = units.len();
        let (m, rinv_m, t) = self.solved(units);
        let gt = self.model.gram_chol().solve(&t);
        let quad = m.transpose() * rinv_m;
        let corr = t.transpose() * gt;
        let s2 = self.model.process_variance();
        DMatrix::from_fn(g, g, |a, b| s2 * (self.prior(&units[a], &units[b]) - quad[(a, b)] + corr[(a, b)]))
    }

    /// Variance at each point (original units), clamped at zero.
    pub fn variance_unit(&self, units: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (m, rinv_m, t) = self.solved(units);
        let gt = self.model.gram_chol().solve(&t);
        let s2 = self.model.process_variance();
        (0..units.len())
            .map(|k| {
                let quad = m.column(k).dot(&rinv_m.column(k));
                let corr = t.column(k).dot(&gt.column(k));
                let v = s2 * (self.prior(&units[k], &units[k]) - quad + corr);
                clamp_variance(v, s2, self.model.nugget() > 0.0)
            })
            .collect()
    }
}

fn units_1d(marg: &Marginalizer, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    grid.iter().map(|x| marg.to_unit(&[*x])).collect()
}

/// Mean of the main effect of input `i` at each grid value.
pub fn main_effect_mean(model: &GpModel, i: usize, grid: &[f64]) -> Result<Vec<f64>> {
    let marg = Marginalizer::new(model, &[i])?;
    Ok(units_1d(&marg, grid)?.iter().map(|u| marg.mean_unit(u)).collect())
}

/// Variance of the main effect of input `i` at each grid value (the
/// covariance diagonal without forming the full matrix).
pub fn main_effect_variance(model: &GpModel, i: usize, grid: &[f64]) -> Result<Vec<f64>> {
    let marg = Marginalizer::new(model, &[i])?;
    marg.variance_unit(&units_1d(&marg, grid)?)
}

/// Covariance of the main effect of input `i` on the grid, repaired to be
/// positive semi-definite.
pub fn main_effect_cov(model: &GpModel, i: usize, grid: &[f64]) -> Result<RepairedCovariance> {
    let marg = Marginalizer::new(model, &[i])?;
    let c = marg.covariance_unit(&units_1d(&marg, grid)?);
    RepairedCovariance::repair(c, model.process_variance())
}

/// Mean and covariance of the main effect of input `i` on the grid.
pub fn main_effect(model: &GpModel, i: usize, grid: &[f64]) -> Result<MainEffectGp> {
    let marg = Marginalizer::new(model, &[i])?;
    let units = units_1d(&marg, grid)?;
    let mean = units.iter().map(|u| marg.mean_unit(u)).collect();
    let cov = RepairedCovariance::repair(marg.covariance_unit(&units), model.process_variance())?;
    Ok(MainEffectGp { dim: i, grid: grid.to_vec(), mean, cov })
}

/// Process of the inputs in `dims` with all other inputs averaged out,
/// evaluated at `points` (each holding the `dims` coordinates in order).
pub fn interaction_effect(model: &GpModel, dims: &[usize], points: &[Vec<f64>]) -> Result<InteractionEffectGp> {
    let marg = Marginalizer::new(model, dims)?;
    let units: Vec<Vec<f64>> = points.iter().map(|p| marg.to_unit(p)).collect::<Result<_>>()?;
    let mean = units.iter().map(|u| marg.mean_unit(u)).collect();
    let cov = RepairedCovariance::repair(marg.covariance_unit(&units), model.process_variance())?;
    Ok(InteractionEffectGp { dims: dims.to_vec(), points: points.to_vec(), mean, cov })
}

/// Sampling estimate of a main effect with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloMainEffect {
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub variance: Vec<f64>,
    pub variance_se: Vec<f64>,
}

/// Main effect of input `i` by sampling instead of kernel integrals.
///
/// The other inputs are drawn uniformly; for the variance, two independent
/// draws per sample give an unbiased estimate of the double average of the
/// posterior covariance. The `draws` samples are split into `batches`
/// independent groups and the standard errors come from the spread of the
/// batch estimates.
pub fn monte_carlo_main_effect(
    model: &GpModel,
    i: usize,
    grid: &[f64],
    draws: usize,
    batches: usize,
    seed: u64,
) -> Result<MonteCarloMainEffect> {
    let d = model.dim();
    if i >= d {
        return Err(GsaError::invalid(format!("input {i} out of range for dimension {d}")));
    }
    if batches < 2 || draws < batches {
        return Err(GsaError::invalid("need at least two batches and one draw per batch"));
    }
    let bounds = model.bounds();
    let units: Vec<f64> = grid.iter().map(|x| bounds.to_unit_coord(i, *x)).collect();
    let xs = model.unit_inputs();
    let n = xs.nrows();
    let theta = model.theta();
    let alpha = model.alpha();
    let beta = model.beta_vec();
    let (y_mean, y_scale) = (model.output_mean(), model.output_scale());
    let per_batch = draws / batches;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);

    // Correlation with the training points along input i only.
    let along_i: Vec<DVector<f64>> = units
        .iter()
        .map(|u| DVector::from_fn(n, |l, _| (-theta[i] * (u - xs[(l, i)]).powi(2)).exp()))
        .collect();
    let mut means = vec![Vec::with_capacity(batches); grid.len()];
    let mut vars = vec![Vec::with_capacity(batches); grid.len()];
    for _ in 0..batches {
        let mut w = [DVector::zeros(n), DVector::zeros(n)];
        let mut z_mean = [vec![0.0; d], vec![0.0; d]];
        let mut prior = 0.0;
        for _ in 0..per_batch {
            let z: [Vec<f64>; 2] = [(0..d).map(|_| rng.random()).collect(), (0..d).map(|_| rng.random()).collect()];
            for side in 0..2 {
                for l in 0..n {
                    let s: f64 = (0..d)
                        .filter(|&k| k != i)
                        .map(|k| theta[k] * (z[side][k] - xs[(l, k)]).powi(2))
                        .sum();
                    w[side][l] += (-s).exp();
                }
                for k in 0..d {
                    z_mean[side][k] += z[side][k];
                }
            }
            let s: f64 = (0..d).filter(|&k| k != i).map(|k| theta[k] * (z[0][k] - z[1][k]).powi(2)).sum();
            prior += (-s).exp();
        }
        let m = per_batch as f64;
        for side in 0..2 {
            w[side] /= m;
            z_mean[side].iter_mut().for_each(|v| *v /= m);
        }
        prior /= m;
        for (g, e) in along_i.iter().enumerate() {
            let mut f = Vec::with_capacity(2);
            let mut r = Vec::with_capacity(2);
            for side in 0..2 {
                let mut u = z_mean[side].clone();
                u[i] = units[g];
                f.push(DVector::from_vec(basis_row(model.basis(), &u)));
                r.push(e.component_mul(&w[side]));
            }
            let unit_mean = 0.5 * (beta.dot(&f[0]) + alpha.dot(&r[0]) + beta.dot(&f[1]) + alpha.dot(&r[1]));
            means[g].push(y_mean + y_scale * unit_mean);
            let c = model.unit_covariance_form(prior, &r[0], &f[0], &r[1], &f[1]);
            vars[g].push(y_scale * y_scale * c);
        }
    }
    let summarize = |v: &[f64]| {
        let b = v.len() as f64;
        let mean = v.iter().sum::<f64>() / b;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0);
        (mean, (var / b).sqrt())
    };
    let (mean, mean_se): (Vec<f64>, Vec<f64>) = means.iter().map(|v| summarize(v)).unzip();
    let (variance, variance_se): (Vec<f64>, Vec<f64>) = vars.iter().map(|v| summarize(v)).unzip();
    Ok(MonteCarloMainEffect { mean, mean_se, variance, variance_se })
}

#[cfg(test)]
mod tests;
