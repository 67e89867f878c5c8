//! First-order Sobol indices from a fitted surrogate.
//!
//! Two estimators share the same denominator, the sample variance of the
//! posterior mean over a candidate set:
//!
//! * the mean-predictor estimator takes the variance of each main-effect
//!   mean over the candidates' coordinates;
//! * the full-GP estimator draws realizations of each main-effect process on
//!   a grid and reports the average realized variance together with its
//!   spread, which gives a standard deviation for every index.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GsaError, Result};
use crate::gp::GpModel;
use crate::marginal::{main_effect, uniform_grid, Marginalizer};

/// Which estimator produced a [`SobolEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MeanPredictor,
    FullGp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolEstimate {
    pub indices: Vec<f64>,
    /// Standard deviation of each index (full-GP estimator only).
    pub index_std: Option<Vec<f64>>,
    pub main_effect_vars: Vec<f64>,
    pub total_var: f64,
    pub method: Method,
    pub n_candidates: usize,
    pub n_realizations: Option<usize>,
    pub seed: Option<u64>,
}

impl SobolEstimate {
    /// The indices sum to more than 1.1, which only estimation error can
    /// explain.
    pub fn is_suspect(&self) -> bool {
        self.indices.iter().sum::<f64>() > 1.1
    }
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

fn check_candidates(model: &GpModel, candidates: &[Vec<f64>]) -> Result<()> {
    if candidates.len() < 2 {
        return Err(GsaError::invalid("need at least two candidate points"));
    }
    if let Some(c) = candidates.iter().find(|c| c.len() != model.dim()) {
        return Err(GsaError::invalid(format!(
            "candidate has dimension {}, expected {}",
            c.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// Sample variance of the posterior mean over the candidates.
pub fn total_variance(model: &GpModel, candidates: &[Vec<f64>]) -> Result<f64> {
    check_candidates(model, candidates)?;
    let means: Vec<f64> = candidates.iter().map(|c| model.predict_mean(c)).collect();
    let v = sample_variance(&means);
    if !(v > 0.0) {
        return Err(GsaError::DegenerateVariance(
            "the posterior mean is constant over the candidates".into(),
        ));
    }
    Ok(v)
}

fn finish(
    main_effect_vars: Vec<f64>,
    index_std: Option<Vec<f64>>,
    total_var: f64,
    method: Method,
    n_candidates: usize,
    n_realizations: Option<usize>,
    seed: Option<u64>,
) -> SobolEstimate {
    let indices: Vec<f64> = main_effect_vars.iter().map(|v| v / total_var).collect();
    let est = SobolEstimate {
        indices,
        index_std,
        main_effect_vars,
        total_var,
        method,
        n_candidates,
        n_realizations,
        seed,
    };
    if est.is_suspect() {
        log::warn!("first-order indices sum to {:.3}", est.indices.iter().sum::<f64>());
    }
    est
}

/// Main-effect variance of every input from the main-effect means,
/// evaluated at the candidates' coordinates.
///
/// ```
/// use gsax::gp::{Basis, Bounds, FitConfig, GpModel, NuggetMode, TrainingSet};
/// use gsax::sobol::estimate_mean_predictor;
///
/// let bounds = Bounds::cube(2, 0.0, 1.0).unwrap();
/// let xs: Vec<Vec<f64>> = (0..12).map(|k| vec![(k as f64 * 0.37) % 1.0, (k as f64 * 0.61) % 1.0]).collect();
/// let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x[0]).collect();
/// let data = TrainingSet::new(xs, ys, bounds).unwrap();
/// let gp = GpModel::fit(&data, Basis::Linear, NuggetMode::None, &FitConfig::default()).unwrap();
///
/// let candidates: Vec<Vec<f64>> = (0..400).map(|k| vec![(k as f64 * 0.618) % 1.0, (k as f64 * 0.414) % 1.0]).collect();
/// let s = estimate_mean_predictor(&gp, &candidates).unwrap();
/// assert!((s.indices[0] - 1.0).abs() < 0.02 && s.indices[1] < 0.02);
/// ```
pub fn estimate_mean_predictor(model: &GpModel, candidates: &[Vec<f64>]) -> Result<SobolEstimate> {
    let total = total_variance(model, candidates)?;
    let d = model.dim();
    let mut vars = Vec::with_capacity(d);
    for i in 0..d {
        let marg = Marginalizer::new(model, &[i])?;
        let means = candidates
            .iter()
            .map(|c| Ok(marg.mean_unit(&marg.to_unit(&[c[i]])?)))
            .collect::<Result<Vec<f64>>>()?;
        vars.push(sample_variance(&means));
    }
    Ok(finish(vars, None, total, Method::MeanPredictor, candidates.len(), None, None))
}

/// Average and spread of the realized variance of `mean + factor * eps`
/// over `n_s` standard normal draws `eps`. Returns `(average, spread)` where
/// the spread is the unbiased sample variance of the realized variances.
pub fn simulate_main_effect_variances(
    mean: &[f64],
    factor: &DMatrix<f64>,
    n_s: usize,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let g = mean.len();
    let mu = DVector::from_column_slice(mean);
    let mut realized = Vec::with_capacity(n_s);
    for _ in 0..n_s {
        let eps = DVector::from_fn(g, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = &mu + factor * eps;
        realized.push(sample_variance(v.as_slice()));
    }
    let avg = realized.iter().sum::<f64>() / n_s as f64;
    (avg, sample_variance(&realized))
}

/// Index means and standard deviations from simulated main-effect
/// realizations on an `n_grid` grid per input.
pub fn estimate_full_gp(
    model: &GpModel,
    candidates: &[Vec<f64>],
    n_grid: usize,
    n_s: usize,
    seed: u64,
) -> Result<SobolEstimate> {
    if n_s < 2 {
        return Err(GsaError::invalid("need at least two realizations"));
    }
    let total = total_variance(model, candidates)?;
    let d = model.dim();
    let mut vars = Vec::with_capacity(d);
    let mut stds = Vec::with_capacity(d);
    for i in 0..d {
        let grid = uniform_grid(model, i, n_grid)?;
        let me = main_effect(model, i, &grid)?;
        // One stream per input so the result does not depend on evaluation
        // order.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (avg, spread) = simulate_main_effect_variances(&me.mean, me.cov.factor(), n_s, &mut rng);
        vars.push(avg);
        stds.push(spread.sqrt() / total);
    }
    Ok(finish(vars, Some(stds), total, Method::FullGp, candidates.len(), Some(n_s), Some(seed)))
}

#[cfg(test)]
mod tests;
