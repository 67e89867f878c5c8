//! Learning functions that score candidate points, and selection of the
//! next sample.
//!
//! Global-fit scores (EIGF, VIGF) look at the full surrogate around the
//! nearest training point. MUSIC scores look at the main-effect processes:
//! per input, the expected improvement (or its variance) of the main effect
//! between the candidate's coordinate and the nearest training coordinate,
//! combined over inputs by weights and a distance factor.
//!
//! All distances are measured in normalized input space.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GsaError, Result};
use crate::gp::{GpModel, DUPLICATE_TOL};
use crate::marginal::Marginalizer;

/// Learning function used to pick the next sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Random,
    Eigf,
    Vigf,
    MusicEigfD1,
    MusicEigfD2,
    MusicVigfD1,
    MusicVigfD2,
    /// One input at a time: the coordinate of largest main-effect
    /// improvement, the other coordinates drawn at random.
    #[serde(rename = "music-cw")]
    MusicComponentwise,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Random,
        StrategyKind::Eigf,
        StrategyKind::Vigf,
        StrategyKind::MusicEigfD1,
        StrategyKind::MusicEigfD2,
        StrategyKind::MusicVigfD1,
        StrategyKind::MusicVigfD2,
        StrategyKind::MusicComponentwise,
    ];

    /// Stable command-line name.
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Eigf => "eigf",
            StrategyKind::Vigf => "vigf",
            StrategyKind::MusicEigfD1 => "music-eigf-d1",
            StrategyKind::MusicEigfD2 => "music-eigf-d2",
            StrategyKind::MusicVigfD1 => "music-vigf-d1",
            StrategyKind::MusicVigfD2 => "music-vigf-d2",
            StrategyKind::MusicComponentwise => "music-cw",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name).ok_or_else(|| {
            let all: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            GsaError::UnknownName(format!("strategy {name:?}; expected one of {}", all.join(", ")))
        })
    }

    pub fn music_variant(self) -> Option<MusicVariant> {
        use DistanceFactor::*;
        use ImprovementMoment::*;
        let (moment, distance) = match self {
            StrategyKind::MusicEigfD1 => (Expected, Componentwise),
            StrategyKind::MusicEigfD2 => (Expected, Euclidean),
            StrategyKind::MusicVigfD1 => (Variance, Componentwise),
            StrategyKind::MusicVigfD2 => (Variance, Euclidean),
            _ => return None,
        };
        Some(MusicVariant { moment, distance })
    }

    /// Whether scoring needs the main-effect cache.
    pub fn uses_marginals(self) -> bool {
        self.music_variant().is_some() || self == StrategyKind::MusicComponentwise
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = GsaError;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImprovementMoment {
    Expected,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceFactor {
    /// `sum_i w_i |x_i - x_i*| M_i` with the nearest training coordinate
    /// per input.
    Componentwise,
    /// `||x - x*||^2 sum_i w_i M_i` with the nearest training point.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MusicVariant {
    pub moment: ImprovementMoment,
    pub distance: DistanceFactor,
}

/// How the per-input MUSIC weights are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Uniform,
    /// Proportional to the current index estimates.
    SobolProportional,
    /// Given weights, normalized to sum to one.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub weights: WeightMode,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        Strategy { kind, weights: WeightMode::Uniform }
    }

    /// Weights for a `d`-input model given the current index estimates.
    pub fn weights(&self, d: usize, sobol: Option<&[f64]>) -> Result<Vec<f64>> {
        match &self.weights {
            WeightMode::Uniform => Ok(vec![1.0 / d as f64; d]),
            WeightMode::SobolProportional => {
                let s = sobol.ok_or_else(|| GsaError::State("proportional weights need index estimates".into()))?;
                if s.len() != d {
                    return Err(GsaError::invalid("index estimates do not match the dimension"));
                }
                let clipped: Vec<f64> = s.iter().map(|v| v.max(0.0)).collect();
                if clipped.iter().sum::<f64>() > 0.0 {
                    normalize_weights(&clipped)
                } else {
                    Ok(vec![1.0 / d as f64; d])
                }
            }
            WeightMode::Fixed(w) => {
                if w.len() != d {
                    return Err(GsaError::invalid(format!("{} weights given for {d} inputs", w.len())));
                }
                normalize_weights(w)
            }
        }
    }
}

/// Scales nonnegative weights to sum to one.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = raw.iter().sum();
    if raw.iter().any(|w| !(*w >= 0.0)) || !(sum > 0.0) || !sum.is_finite() {
        return Err(GsaError::invalid("weights must be nonnegative with a positive sum"));
    }
    Ok(raw.iter().map(|w| w / sum).collect())
}

fn check_weights(w: &[f64], d: usize) -> Result<()> {
    if w.len() != d || w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(GsaError::invalid(format!("weights {w:?} must be {d} nonnegative values summing to 1")));
    }
    Ok(())
}

/// Expectation and VIGF variance term of the improvement `I = (Z - y*)^2`
/// for `Z ~ N(mu, s2)` with `gap = mu - y*`.
///
/// The variance term is the customary VIGF form `4 s2 (gap^2 + 2 s2)`, so
/// that `V = 4 s2 (E + s2)`. The exact variance of `I` is
/// `4 s2 gap^2 + 2 s2^2`, smaller by `6 s2^2`; the extra weight on `s2^2`
/// makes the score favour exploration.
pub fn improvement_moments(gap: f64, s2: f64) -> (f64, f64) {
    let g2 = gap * gap;
    (g2 + s2, 4.0 * s2 * (g2 + 2.0 * s2))
}

fn global_improvement(model: &GpModel, x: &[f64]) -> Result<(f64, f64)> {
    let (j, dist2) = model.nearest_training(x);
    // A training point can never be added again, so it has nothing to offer.
    if dist2 <= DUPLICATE_TOL * DUPLICATE_TOL {
        return Ok((0.0, 0.0));
    }
    let p = model.predict(x)?;
    Ok(improvement_moments(p.mean - model.training().outputs()[j], p.variance))
}

/// Expected improvement for global fit at `x`.
pub fn eigf(model: &GpModel, x: &[f64]) -> Result<f64> {
    Ok(global_improvement(model, x)?.0)
}

/// Variance of the global-fit improvement at `x`.
pub fn vigf(model: &GpModel, x: &[f64]) -> Result<f64> {
    Ok(global_improvement(model, x)?.1)
}

/// Mean and variance of every main effect on a uniform grid, plus the exact
/// main-effect means at the training coordinates.
pub struct MarginalCache<'a> {
    model: &'a GpModel,
    marginalizers: Vec<Marginalizer<'a>>,
    n_grid: usize,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
    /// Inputs whose linear interpolation is not accurate enough; their means
    /// are evaluated exactly.
    exact: Vec<bool>,
    /// Per input, training coordinates (normalized) sorted, with the
    /// exact main-effect mean there.
    projections: Vec<Vec<(f64, f64)>>,
}

/// Interpolation error, relative to the output scale, above which the
/// main-effect mean is evaluated exactly instead.
pub const INTERPOLATION_TOL: f64 = 1e-6;

impl<'a> MarginalCache<'a> {
    pub fn new(model: &'a GpModel, n_grid: usize) -> Result<Self> {
        if n_grid < 2 {
            return Err(GsaError::invalid("grid needs at least two points"));
        }
        let d = model.dim();
        let unit = model.unit_inputs();
        let last = (n_grid - 1) as f64;
        let mut cache = MarginalCache {
            model,
            marginalizers: Vec::with_capacity(d),
            n_grid,
            means: Vec::with_capacity(d),
            vars: Vec::with_capacity(d),
            exact: Vec::with_capacity(d),
            projections: Vec::with_capacity(d),
        };
        for i in 0..d {
            let marg = Marginalizer::new(model, &[i])?;
            let units: Vec<Vec<f64>> = (0..n_grid).map(|k| vec![k as f64 / last]).collect();
            let means: Vec<f64> = units.iter().map(|u| marg.mean_unit(u)).collect();
            let vars = marg.variance_unit(&units)?;
            let worst = (0..n_grid - 1)
                .map(|k| (marg.mean_unit(&[(k as f64 + 0.5) / last]) - 0.5 * (means[k] + means[k + 1])).abs())
                .fold(0.0, f64::max);
            let exact = worst > INTERPOLATION_TOL * model.output_scale();
            let mut proj: Vec<(f64, f64)> =
                (0..unit.nrows()).map(|l| (unit[(l, i)], marg.mean_unit(&[unit[(l, i)]]))).collect();
            proj.sort_by(|a, b| a.0.total_cmp(&b.0));
            cache.marginalizers.push(marg);
            cache.means.push(means);
            cache.vars.push(vars);
            cache.exact.push(exact);
            cache.projections.push(proj);
        }
        Ok(cache)
    }

    pub fn model(&self) -> &GpModel {
        self.model
    }

    pub fn grid_size(&self) -> usize {
        self.n_grid
    }

    /// Whether input `i` bypasses grid interpolation.
    pub fn is_exact(&self, i: usize) -> bool {
        self.exact[i]
    }

    /// Main-effect mean of input `i` at normalized coordinate `u`.
    pub fn mean(&self, i: usize, u: f64) -> f64 {
        if self.exact[i] {
            return self.marginalizers[i].mean_unit(&[u]);
        }
        let pos = (u.clamp(0.0, 1.0)) * (self.n_grid - 1) as f64;
        let k = (pos.floor() as usize).min(self.n_grid - 2);
        let frac = pos - k as f64;
        let m = &self.means[i];
        m[k] + frac * (m[k + 1] - m[k])
    }

    /// Main-effect variance of input `i` at the grid cell nearest to `u`.
    pub fn variance(&self, i: usize, u: f64) -> f64 {
        let pos = (u.clamp(0.0, 1.0)) * (self.n_grid - 1) as f64;
        self.vars[i][(pos.round() as usize).min(self.n_grid - 1)]
    }

    /// Nearest training coordinate of input `i` to `u` (normalized), its
    /// distance and the exact main-effect mean there.
    pub fn nearest_projection(&self, i: usize, u: f64) -> (f64, f64, f64) {
        let proj = &self.projections[i];
        let at = proj.partition_point(|p| p.0 < u);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for k in [at.wrapping_sub(1), at] {
            if let Some(&(c, m)) = proj.get(k) {
                let dist = (u - c).abs();
                if dist < best.0 {
                    best = (dist, c, m);
                }
            }
        }
        (best.1, best.0, best.2)
    }

    /// Per input `(E[I_i], V[I_i], |u_i - u_i*|)` at a point in original
    /// units.
    pub fn improvements(&self, x: &[f64]) -> Vec<MainEffectImprovement> {
        let u = self.model.bounds().to_unit(x);
        (0..u.len())
            .map(|i| {
                let (_, distance, anchor_mean) = self.nearest_projection(i, u[i]);
                let (expected, variance) = improvement_moments(self.mean(i, u[i]) - anchor_mean, self.variance(i, u[i]));
                MainEffectImprovement { expected, variance, distance }
            })
            .collect()
    }
}

/// Improvement of one main effect at a candidate coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MainEffectImprovement {
    pub expected: f64,
    pub variance: f64,
    /// Normalized distance to the nearest training coordinate of this input.
    pub distance: f64,
}

/// Combines per-input improvements into one MUSIC score. `euclid_sq` is the
/// squared normalized distance to the nearest training point.
pub fn music_score(
    variant: MusicVariant,
    weights: &[f64],
    improvements: &[MainEffectImprovement],
    euclid_sq: f64,
) -> Result<f64> {
    check_weights(weights, improvements.len())?;
    let moment = |m: &MainEffectImprovement| match variant.moment {
        ImprovementMoment::Expected => m.expected,
        ImprovementMoment::Variance => m.variance,
    };
    Ok(match variant.distance {
        DistanceFactor::Componentwise => {
            weights.iter().zip(improvements).map(|(w, m)| w * m.distance * moment(m)).sum()
        }
        DistanceFactor::Euclidean => {
            euclid_sq * weights.iter().zip(improvements).map(|(w, m)| w * moment(m)).sum::<f64>()
        }
    })
}

/// Index of the largest finite score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|(_, b)| *s > b) {
            best = Some((k, *s));
        }
    }
    best.map(|b| b.0).ok_or_else(|| GsaError::Selection("no candidate has a finite score".into()))
}

/// Scores every candidate (in parallel; the order of the result matches
/// the candidates). Random and component-wise strategies have no
/// per-candidate score.
pub fn score_candidates(
    model: &GpModel,
    cache: Option<&MarginalCache>,
    candidates: &[Vec<f64>],
    kind: StrategyKind,
    weights: &[f64],
) -> Result<Vec<f64>> {
    match kind {
        StrategyKind::Eigf => candidates.par_iter().map(|c| eigf(model, c)).collect(),
        StrategyKind::Vigf => candidates.par_iter().map(|c| vigf(model, c)).collect(),
        StrategyKind::Random | StrategyKind::MusicComponentwise => {
            Err(GsaError::invalid(format!("{kind} does not score candidates")))
        }
        _ => {
            let variant = kind.music_variant().expect("music strategy");
            let cache = cache.ok_or_else(|| GsaError::State("MUSIC scoring needs a marginal cache".into()))?;
            check_weights(weights, model.dim())?;
            candidates
                .par_iter()
                .map(|c| {
                    let (_, dist2) = model.nearest_training(c);
                    music_score(variant, weights, &cache.improvements(c), dist2)
                })
                .collect()
        }
    }
}

/// The chosen next sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub point: Vec<f64>,
    /// Index into the candidate set, unless the point was constructed.
    pub candidate: Option<usize>,
    /// Score of the chosen point (NaN for random selection).
    pub score: f64,
    /// The strategy had no information and fell back to a random point.
    pub fallback: bool,
}

/// Picks the next sample from `candidates` with `strategy`.
pub fn select_next(
    model: &GpModel,
    candidates: &[Vec<f64>],
    strategy: &Strategy,
    sobol: Option<&[f64]>,
    n_grid: usize,
    rng: &mut impl Rng,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(GsaError::invalid("candidate set is empty"));
    }
    let kind = strategy.kind;
    if kind == StrategyKind::Random {
        let k = rng.random_range(0..candidates.len());
        return Ok(Selection { point: candidates[k].clone(), candidate: Some(k), score: f64::NAN, fallback: false });
    }
    let cache = if kind.uses_marginals() { Some(MarginalCache::new(model, n_grid)?) } else { None };
    if kind == StrategyKind::MusicComponentwise {
        return select_componentwise_music(cache.as_ref().expect("cache built"), candidates, rng);
    }
    let weights = strategy.weights(model.dim(), sobol)?;
    let scores = score_candidates(model, cache.as_ref(), candidates, kind, &weights)?;
    let k = argmax(&scores)?;
    Ok(Selection { point: candidates[k].clone(), candidate: Some(k), score: scores[k], fallback: false })
}

/// `(input, candidate, score)` of the largest finite entry of per-input
/// score rows; ties go to the lowest input, then the lowest candidate.
pub fn componentwise_argmax(per_input: &[Vec<f64>]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, scores) in per_input.iter().enumerate() {
        if let Ok(k) = argmax(scores) {
            if best.is_none_or(|b| scores[k] > b.2) {
                best = Some((i, k, scores[k]));
            }
        }
    }
    best
}

/// Finds the input and candidate coordinate of largest expected main-effect
/// improvement, keeps that coordinate and draws the others uniformly.
pub fn select_componentwise_music(
    cache: &MarginalCache,
    candidates: &[Vec<f64>],
    rng: &mut impl Rng,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(GsaError::invalid("candidate set is empty"));
    }
    let model = cache.model();
    let bounds = model.bounds();
    let d = model.dim();
    let per_input: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            candidates
                .par_iter()
                .map(|c| {
                    let u = bounds.to_unit_coord(i, c[i]);
                    let (_, _, anchor) = cache.nearest_projection(i, u);
                    improvement_moments(cache.mean(i, u) - anchor, cache.variance(i, u)).0
                })
                .collect()
        })
        .collect();
    let best = componentwise_argmax(&per_input);
    let mut point: Vec<f64> = (0..d).map(|k| rng.random_range(bounds.lower()[k]..=bounds.upper()[k])).collect();
    match best {
        Some((i, k, score)) if score > 0.0 => {
            point[i] = candidates[k][i];
            Ok(Selection { point, candidate: None, score, fallback: false })
        }
        _ => {
            log::warn!("all main-effect improvements vanish; selecting a random point");
            Ok(Selection { point, candidate: None, score: 0.0, fallback: true })
        }
    }
}
