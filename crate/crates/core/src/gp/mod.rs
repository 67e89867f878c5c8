//! Kriging surrogate with a Gaussian correlation model.
//!
//! The model is fit on normalized data: inputs are mapped to the unit
//! hypercube and outputs are standardized to zero mean and unit variance.
//! All public predictions are reported back in original units, and the
//! correlation lengths `theta` always refer to the normalized inputs.
//!
//! Hyperparameters are estimated by maximum likelihood with the regression
//! coefficients and the process variance profiled out in closed form.

mod correlation;
mod data;
mod optimize;
pub(crate) mod profile;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use correlation::gaussian_correlation;
use correlation::correlation_unchecked;
pub use data::{Bounds, TrainingSet, DUPLICATE_TOL};

use crate::error::{GsaError, Result};
pub(crate) use profile::basis_row;
use profile::Profile;

/// Regression basis of the trend term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Constant,
    /// `[1, u_1, ..., u_d]` in normalized coordinates.
    #[default]
    Linear,
}

impl Basis {
    pub fn size(self, dim: usize) -> usize {
        match self {
            Basis::Constant => 1,
            Basis::Linear => dim + 1,
        }
    }
}

/// How the relative noise variance `tau = sigma_eps^2 / sigma_z^2` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NuggetMode {
    /// Interpolating model.
    #[default]
    None,
    Fixed(f64),
    /// Estimated jointly with `theta` by maximum likelihood.
    Estimated,
}

/// Settings of the multi-start likelihood search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of starts drawn from a scrambled grid in `ln theta`.
    pub restarts: usize,
    pub seed: u64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub max_iters: usize,
    /// Additional start, typically the previous fit of an active-learning run.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 5,
            seed: 0,
            theta_min: 1e-3,
            theta_max: 1e3,
            max_iters: 200,
            warm_start: None,
        }
    }
}

const NUGGET_MIN: f64 = 1e-8;
const NUGGET_MAX: f64 = 0.5;
/// Correlation matrices estimated to be worse conditioned than this are
/// treated as outside the likelihood domain during the search. Beyond it the
/// solves no longer reproduce the training outputs to 1e-8.
pub const MAX_CONDITION: f64 = 1e12;

/// Posterior mean and variance at one point, in original output units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    /// The query point was outside the training bounds.
    pub extrapolated: bool,
}

/// A fitted Kriging model. Immutable once built; share it freely across
/// threads.
#[derive(Debug, Clone)]
pub struct GpModel {
    basis: Basis,
    theta: Vec<f64>,
    nugget: f64,
    training: TrainingSet,
    unit_inputs: DMatrix<f64>,
    y_mean: f64,
    y_scale: f64,
    profile: Profile,
}

impl GpModel {
    /// Fits the model by maximum likelihood.
    ///
    /// ```
    /// use gsax::gp::{Basis, Bounds, FitConfig, GpModel, NuggetMode, TrainingSet};
    ///
    /// let bounds = Bounds::cube(1, 0.0, 1.0).unwrap();
    /// let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
    /// let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
    /// let data = TrainingSet::new(xs, ys, bounds).unwrap();
    /// let gp = GpModel::fit(&data, Basis::Linear, NuggetMode::None, &FitConfig::default()).unwrap();
    /// let p = gp.predict(&[0.4]).unwrap();
    /// assert!((p.mean - (2.4f64).sin()).abs() < 1e-8);
    /// assert!(p.variance < 1e-8);
    /// ```
    pub fn fit(training: &TrainingSet, basis: Basis, nugget_mode: NuggetMode, config: &FitConfig) -> Result<GpModel> {
        let n = training.len();
        let d = training.dim();
        let p = basis.size(d);
        if n < p + 1 {
            return Err(GsaError::invalid(format!(
                "{n} samples cannot support a basis of size {p} (need at least {})",
                p + 1
            )));
        }
        if !(config.theta_min > 0.0 && config.theta_min < config.theta_max) {
            return Err(GsaError::invalid("theta bounds must satisfy 0 < min < max"));
        }
        if let NuggetMode::Fixed(t) = nugget_mode {
            if !(0.0..1.0).contains(&t) {
                return Err(GsaError::invalid(format!("fixed nugget must lie in [0, 1), got {t}")));
            }
        }
        let unit_inputs = training.unit_inputs();
        let (y_mean, y_scale, y) = standardize(training.outputs());

        let estimate_nugget = nugget_mode == NuggetMode::Estimated;
        let fixed_nugget = match nugget_mode {
            NuggetMode::Fixed(t) => t,
            _ => 0.0,
        };

        let assemble = |theta: Vec<f64>, nugget: f64| -> Result<GpModel> {
            let profile = Profile::build(&unit_inputs, &y, &theta, nugget, basis)?;
            Ok(GpModel {
                basis,
                theta,
                nugget,
                training: training.clone(),
                unit_inputs: unit_inputs.clone(),
                y_mean,
                y_scale,
                profile,
            })
        };

        // Constant outputs carry no information about the correlation
        // lengths; skip the search.
        if training.outputs().iter().all(|v| *v == training.outputs()[0]) {
            let theta = config
                .warm_start
                .clone()
                .filter(|t| t.len() == d)
                .unwrap_or_else(|| vec![1.0; d]);
            let nugget = if estimate_nugget { NUGGET_MIN } else { fixed_nugget };
            return assemble(theta, nugget);
        }

        let m = d + usize::from(estimate_nugget);
        let mut lo = vec![config.theta_min.ln(); d];
        let mut hi = vec![config.theta_max.ln(); d];
        if estimate_nugget {
            lo.push(NUGGET_MIN.ln());
            hi.push(NUGGET_MAX.ln());
        }

        let starts = start_points(config, &lo, &hi, m, d);
        let settings = optimize::Settings {
            max_iters: config.max_iters,
            grad_tol: 1e-5,
            value_tol: 1e-10,
            max_step: 2.0,
            step_tol: 1e-6,
            edge_tol: 1e-7,
        };

        let split = |z: &[f64]| -> (Vec<f64>, f64) {
            let theta: Vec<f64> = z[..d].iter().map(|v| v.exp()).collect();
            let nugget = if estimate_nugget { z[d].exp() } else { fixed_nugget };
            (theta, nugget)
        };
        let objective = |z: &[f64]| -> Option<(f64, Profile)> {
            let (theta, nugget) = split(z);
            let prof = Profile::build(&unit_inputs, &y, &theta, nugget, basis).ok()?;
            if prof.condition > MAX_CONDITION {
                return None;
            }
            Some((prof.log_likelihood, prof))
        };
        let gradient = |z: &[f64], prof: Profile| -> Vec<f64> {
            let (theta, nugget) = split(z);
            prof.log_gradient(&unit_inputs, &theta, nugget, estimate_nugget)
        };

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut any_converged = false;
        for z0 in &starts {
            let Some(z0) = defined_start(&objective, z0, &hi, d) else {
                continue;
            };
            let Some(out) = optimize::maximize(objective, gradient, &z0, &lo, &hi, &settings) else {
                continue;
            };
            any_converged |= out.converged;
            if best.as_ref().is_none_or(|(v, _)| out.value > *v) {
                best = Some((out.value, out.x));
            }
        }

        let Some((_, z)) = best else {
            return Err(GsaError::Fit {
                message: "likelihood undefined at every start".into(),
                best: None,
            });
        };
        let (theta, nugget) = split(&z);
        let model = assemble(theta, nugget)?;
        if !any_converged {
            return Err(GsaError::Fit {
                message: format!("no restart converged within {} iterations", config.max_iters),
                best: Some(Box::new(model)),
            });
        }
        Ok(model)
    }

    /// Rebuilds a model with given hyperparameters (no search).
    pub fn with_hyperparameters(training: &TrainingSet, basis: Basis, theta: Vec<f64>, nugget: f64) -> Result<GpModel> {
        if theta.len() != training.dim() || theta.iter().any(|t| !(*t > 0.0)) {
            return Err(GsaError::invalid("theta must have one positive entry per dimension"));
        }
        if !(0.0..1.0).contains(&nugget) {
            return Err(GsaError::invalid(format!("nugget must lie in [0, 1), got {nugget}")));
        }
        let n = training.len();
        if n < basis.size(training.dim()) + 1 {
            return Err(GsaError::invalid("too few samples for the basis"));
        }
        let unit_inputs = training.unit_inputs();
        let (y_mean, y_scale, y) = standardize(training.outputs());
        let profile = Profile::build(&unit_inputs, &y, &theta, nugget, basis)?;
        Ok(GpModel {
            basis,
            theta,
            nugget,
            training: training.clone(),
            unit_inputs,
            y_mean,
            y_scale,
            profile,
        })
    }

    /// Posterior mean and variance at `x` (original units).
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.dim() {
            return Err(GsaError::invalid(format!("point has dimension {}, expected {}", x.len(), self.dim())));
        }
        let extrapolated = !self.bounds().contains(x);
        let u = self.bounds().to_unit(x);
        let r = self.correlation_vector(&u);
        let f = DVector::from_vec(basis_row(self.basis, &u));
        let mean_unit = f.dot(&self.profile.beta) + r.dot(&self.profile.alpha);
        let variance_unit = self.unit_variance(&r, &f)?;
        Ok(Prediction {
            mean: self.y_mean + self.y_scale * mean_unit,
            variance: self.y_scale * self.y_scale * variance_unit,
            extrapolated,
        })
    }

    /// Posterior mean only; skips the triangular solves.
    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        let u = self.bounds().to_unit(x);
        self.y_mean + self.y_scale * self.unit_mean(&u)
    }

    /// Posterior covariance between the process values at `x1` and `x2`
    /// (original units).
    pub fn covariance(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        if x1.len() != self.dim() || x2.len() != self.dim() {
            return Err(GsaError::invalid("point dimension does not match the model"));
        }
        let u1 = self.bounds().to_unit(x1);
        let u2 = self.bounds().to_unit(x2);
        let prior = correlation_unchecked(&u1, &u2, &self.theta);
        let r1 = self.correlation_vector(&u1);
        let r2 = self.correlation_vector(&u2);
        let f1 = DVector::from_vec(basis_row(self.basis, &u1));
        let f2 = DVector::from_vec(basis_row(self.basis, &u2));
        let c = self.unit_covariance_form(prior, &r1, &f1, &r2, &f2);
        Ok(self.y_scale * self.y_scale * c)
    }

    pub(crate) fn unit_mean(&self, u: &[f64]) -> f64 {
        let mut m = self.profile.beta[0];
        if self.basis == Basis::Linear {
            for k in 0..u.len() {
                m += self.profile.beta[k + 1] * u[k];
            }
        }
        for l in 0..self.unit_inputs.nrows() {
            let mut s = 0.0;
            for k in 0..u.len() {
                let diff = u[k] - self.unit_inputs[(l, k)];
                s += self.theta[k] * diff * diff;
            }
            m += self.profile.alpha[l] * (-s).exp();
        }
        m
    }

    fn correlation_vector(&self, u: &[f64]) -> DVector<f64> {
        let n = self.unit_inputs.nrows();
        DVector::from_fn(n, |l, _| {
            let mut s = 0.0;
            for k in 0..u.len() {
                let diff = u[k] - self.unit_inputs[(l, k)];
                s += self.theta[k] * diff * diff;
            }
            (-s).exp()
        })
    }

    /// `sigma_z^2 (prior - r1^T R^-1 r2 + t1^T (F^T R^-1 F)^-1 t2)` in
    /// normalized units, with `t = F^T R^-1 r - f`.
    pub(crate) fn unit_covariance_form(
        &self,
        prior: f64,
        r1: &DVector<f64>,
        f1: &DVector<f64>,
        r2: &DVector<f64>,
        f2: &DVector<f64>,
    ) -> f64 {
        let v2 = self.profile.chol.solve(r2);
        let quad = r1.dot(&v2);
        let t1 = self.profile.rinv_f.transpose() * r1 - f1;
        let t2 = self.profile.rinv_f.transpose() * r2 - f2;
        let gt2 = self.profile.gram_chol.solve(&t2);
        self.profile.sigma2 * (prior - quad + t1.dot(&gt2))
    }

    fn unit_variance(&self, r: &DVector<f64>, f: &DVector<f64>) -> Result<f64> {
        let s2 = self.profile.sigma2;
        // 1 - r^T R^-1 r via a single forward solve keeps it symmetric.
        let v = self
            .profile
            .chol
            .l_dirty()
            .solve_lower_triangular(r)
            .ok_or_else(|| GsaError::Conditioning("singular Cholesky factor".into()))?;
        let t = self.profile.rinv_f.transpose() * r - f;
        let gt = self.profile.gram_chol.solve(&t);
        let var = s2 * (1.0 - v.norm_squared() + t.dot(&gt));
        clamp_variance(var, s2, self.nugget > 0.0)
    }

    pub fn dim(&self) -> usize {
        self.training.dim()
    }

    pub fn bounds(&self) -> &Bounds {
        self.training.bounds()
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// Diagonal jitter that was needed to factorize the correlation matrix.
    pub fn jitter(&self) -> f64 {
        self.profile.jitter
    }

    /// Generalized least-squares trend coefficients (normalized units).
    pub fn beta(&self) -> &[f64] {
        self.profile.beta.as_slice()
    }

    /// Process variance in original output units.
    pub fn process_variance(&self) -> f64 {
        self.profile.sigma2 * self.y_scale * self.y_scale
    }

    /// Process variance of the standardized outputs.
    pub fn unit_process_variance(&self) -> f64 {
        self.profile.sigma2
    }

    pub fn log_likelihood(&self) -> f64 {
        self.profile.log_likelihood
    }

    pub fn output_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn output_scale(&self) -> f64 {
        self.y_scale
    }

    pub(crate) fn unit_inputs(&self) -> &DMatrix<f64> {
        &self.unit_inputs
    }

    pub(crate) fn alpha(&self) -> &DVector<f64> {
        &self.profile.alpha
    }

    pub(crate) fn beta_vec(&self) -> &DVector<f64> {
        &self.profile.beta
    }

    pub(crate) fn chol(&self) -> &Cholesky<f64, Dyn> {
        &self.profile.chol
    }

    pub(crate) fn rinv_f(&self) -> &DMatrix<f64> {
        &self.profile.rinv_f
    }

    pub(crate) fn gram_chol(&self) -> &Cholesky<f64, Dyn> {
        &self.profile.gram_chol
    }

    /// Index of the training input nearest to `x` (Euclidean distance in
    /// normalized space) and that squared distance.
    pub fn nearest_training(&self, x: &[f64]) -> (usize, f64) {
        let u = self.bounds().to_unit(x);
        nearest_row(&self.unit_inputs, &u)
    }

    /// Self-describing JSON record from which the model can be rebuilt
    /// exactly.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.record()).map_err(|e| GsaError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<GpModel> {
        let rec: GpModelRecord = serde_json::from_str(text).map_err(|e| GsaError::Parse(e.to_string()))?;
        if rec.format != RECORD_FORMAT {
            return Err(GsaError::Parse(format!("unsupported model record format {:?}", rec.format)));
        }
        let model = GpModel::with_hyperparameters(&rec.training, rec.basis, rec.theta, rec.nugget)?;
        if model.profile.jitter != rec.jitter {
            log::warn!("model record jitter {} differs from rebuilt {}", rec.jitter, model.profile.jitter);
        }
        Ok(model)
    }

    pub fn record(&self) -> GpModelRecord {
        GpModelRecord {
            format: RECORD_FORMAT.to_string(),
            basis: self.basis,
            theta: self.theta.clone(),
            nugget: self.nugget,
            jitter: self.profile.jitter,
            beta: self.profile.beta.as_slice().to_vec(),
            sigma_z2: self.profile.sigma2,
            output_mean: self.y_mean,
            output_scale: self.y_scale,
            log_likelihood: self.profile.log_likelihood,
            training: self.training.clone(),
        }
    }
}

const RECORD_FORMAT: &str = "gsax-gp-model/1";

/// Serialized form of a [`GpModel`]. Factorizations are not stored; they
/// are recomputed deterministically from the hyperparameters and the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModelRecord {
    pub format: String,
    pub basis: Basis,
    pub theta: Vec<f64>,
    pub nugget: f64,
    pub jitter: f64,
    pub beta: Vec<f64>,
    /// Process variance of the standardized outputs.
    pub sigma_z2: f64,
    pub output_mean: f64,
    pub output_scale: f64,
    pub log_likelihood: f64,
    pub training: TrainingSet,
}

/// Clamps round-off negatives to zero. With a nugget the substituted
/// correlation matrix no longer guarantees a nonnegative form, so negatives
/// are clamped there without complaint.
pub(crate) fn clamp_variance(var: f64, sigma2: f64, noisy: bool) -> Result<f64> {
    if var < -1e-10 * sigma2 && !noisy {
        return Err(GsaError::Conditioning(format!(
            "posterior variance {var:e} is negative beyond round-off (sigma_z^2 = {sigma2:e})"
        )));
    }
    Ok(var.max(0.0))
}

pub(crate) fn nearest_row(rows: &DMatrix<f64>, u: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for l in 0..rows.nrows() {
        let mut s = 0.0;
        for k in 0..u.len() {
            let diff = u[k] - rows[(l, k)];
            s += diff * diff;
        }
        if s < best.1 {
            best = (l, s);
        }
    }
    best
}

fn standardize(y: &[f64]) -> (f64, f64, DVector<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    (mean, scale, DVector::from_iterator(y.len(), y.iter().map(|v| (v - mean) / scale)))
}

/// Moves a start where the likelihood is undefined towards larger `theta`
/// (shorter correlation lengths, better conditioning) until it is defined.
fn defined_start<F, T>(objective: &F, z0: &[f64], hi: &[f64], d: usize) -> Option<Vec<f64>>
where
    F: Fn(&[f64]) -> Option<(f64, T)>,
{
    let mut z = z0.to_vec();
    loop {
        if objective(&z).is_some() {
            return Some(z);
        }
        if (0..d).all(|k| z[k] >= hi[k]) {
            return None;
        }
        for k in 0..d {
            z[k] = (z[k] + 0.5).min(hi[k]);
        }
    }
}

/// Latin-hypercube scrambled grid over the search box, plus the warm start.
fn start_points(config: &FitConfig, lo: &[f64], hi: &[f64], m: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let count = config.restarts.max(1);
    let mut columns: Vec<Vec<usize>> = Vec::with_capacity(m);
    for _ in 0..m {
        let mut perm: Vec<usize> = (0..count).collect();
        perm.shuffle(&mut rng);
        columns.push(perm);
    }
    let mut starts = Vec::with_capacity(count + 1);
    if let Some(w) = config.warm_start.as_ref().filter(|w| w.len() == d) {
        let mut z: Vec<f64> = w
            .iter()
            .map(|t| t.max(config.theta_min).min(config.theta_max).ln())
            .collect();
        if m > d {
            z.push(1e-6f64.ln());
        }
        starts.push(z);
    }
    for r in 0..count {
        starts.push(
            (0..m)
                .map(|k| lo[k] + (hi[k] - lo[k]) * (columns[k][r] as f64 + 0.5) / count as f64)
                .collect(),
        );
    }
    starts
}

/// Profiled log-likelihood of `(theta, nugget)` on the standardized
/// training data. Returns `-inf` where the correlation matrix cannot be
/// factorized.
pub fn log_likelihood(theta: &[f64], nugget: f64, training: &TrainingSet, basis: Basis) -> Result<f64> {
    if theta.len() != training.dim() || theta.iter().any(|t| !(*t > 0.0)) {
        return Err(GsaError::invalid("theta must have one positive entry per dimension"));
    }
    let unit_inputs = training.unit_inputs();
    let (_, _, y) = standardize(training.outputs());
    match Profile::build(&unit_inputs, &y, theta, nugget, basis) {
        Ok(p) => Ok(p.log_likelihood),
        Err(e) => {
            log::debug!("log-likelihood undefined at theta {theta:?}: {e}");
            Ok(f64::NEG_INFINITY)
        }
    }
}
