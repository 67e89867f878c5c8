//! The sequential active-learning loop: initial design, fit, estimate,
//! select, evaluate, refit, until the indices settle or the budget is spent.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{select_next, Selection, Strategy, StrategyKind};
use crate::error::{GsaError, Result};
use crate::gp::{Basis, Bounds, FitConfig, GpModel, NuggetMode, TrainingSet};
use crate::marginal::DEFAULT_GRID_SIZE;
use crate::sobol::{estimate_full_gp, estimate_mean_predictor, Method, SobolEstimate};

/// Version tag written as the first line of trace CSV files.
pub const TRACE_CSV_VERSION: &str = "# gsax-trace v1";

/// Latin hypercube sample: per input, one point uniformly placed in each of
/// `n` equal strata, the strata visited in random order.
pub fn lhs_sample(n: usize, bounds: &Bounds, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let mut points = vec![vec![0.0; d]; n];
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..d {
        order.shuffle(rng);
        for (p, &stratum) in points.iter_mut().zip(&order) {
            let u = (stratum as f64 + rng.random::<f64>()) / n as f64;
            p[k] = bounds.from_unit_coord(k, u);
        }
    }
    points
}

/// Independent uniform points in the box.
pub fn uniform_sample(n: usize, bounds: &Bounds, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..bounds.dim()).map(|k| bounds.from_unit_coord(k, rng.random::<f64>())).collect())
        .collect()
}

/// How each iteration's candidate pool is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CandidateDesign {
    #[default]
    Uniform,
    Lhs,
}

/// Stop once the largest index change stays below `epsilon` for `patience`
/// consecutive iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub epsilon: f64,
    pub patience: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence { epsilon: 0.005, patience: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub n_initial: usize,
    /// Total number of model evaluations, initial design included.
    pub budget: usize,
    pub n_candidates: usize,
    pub n_grid: usize,
    pub strategy: Strategy,
    /// `None` runs to the budget.
    pub convergence: Option<Convergence>,
    pub seed: u64,
    /// Seed of the initial design when it should not follow `seed`, e.g. to
    /// give strategies compared on the same trial independent designs.
    pub design_seed: Option<u64>,
    pub estimator: Method,
    /// Realizations per input for the full-GP estimator.
    pub n_realizations: usize,
    pub candidate_design: CandidateDesign,
    pub basis: Basis,
    pub nugget: NuggetMode,
    /// Random starts of each likelihood search (plus the previous fit).
    pub restarts: usize,
    /// Record wall-clock time per iteration. Off by default so traces are
    /// reproducible byte for byte.
    pub timing: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            n_initial: 10,
            budget: 500,
            n_candidates: 25_000,
            n_grid: DEFAULT_GRID_SIZE,
            strategy: Strategy::new(StrategyKind::Random),
            convergence: Some(Convergence::default()),
            seed: 0,
            design_seed: None,
            estimator: Method::MeanPredictor,
            n_realizations: 500,
            candidate_design: CandidateDesign::Uniform,
            basis: Basis::Linear,
            nugget: NuggetMode::None,
            restarts: 5,
            timing: false,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_initial < 2 {
            return Err(GsaError::invalid("need at least two initial samples"));
        }
        if self.budget < self.n_initial {
            return Err(GsaError::invalid("budget must cover the initial design"));
        }
        if self.n_candidates < 2 {
            return Err(GsaError::invalid("need at least two candidates"));
        }
        if self.n_grid < 2 {
            return Err(GsaError::invalid("grid needs at least two points"));
        }
        if let Some(c) = self.convergence {
            if !(c.epsilon > 0.0) || c.patience == 0 {
                return Err(GsaError::invalid("convergence needs epsilon > 0 and patience >= 1"));
            }
        }
        if self.estimator == Method::FullGp && self.n_realizations < 2 {
            return Err(GsaError::invalid("full-GP estimator needs at least two realizations"));
        }
        Ok(())
    }
}

/// One estimate of the indices, after the sample that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub n_samples: usize,
    pub total_var: f64,
    pub main_effect_vars: Vec<f64>,
    pub sobol: Vec<f64>,
    pub sobol_std: Option<Vec<f64>>,
    /// Sample added since the previous record (none for the initial design).
    pub selected: Option<Vec<f64>>,
    pub score: Option<f64>,
    /// The strategy fell back to a random point.
    pub fallback: bool,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Converged,
    BudgetExhausted,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub dim: usize,
    pub records: Vec<TraceRecord>,
    pub status: TraceStatus,
    /// Reason for an error status.
    pub message: Option<String>,
    /// Recoverable problems met on the way (skipped proposals, fits that
    /// did not converge).
    pub warnings: Vec<String>,
}

/// Whether the last `patience` changes of the index vector all stay below
/// `epsilon` (largest absolute change over inputs).
pub fn check_convergence(records: &[TraceRecord], epsilon: f64, patience: usize) -> bool {
    if patience == 0 || records.len() < patience + 1 {
        return false;
    }
    records[records.len() - patience - 1..].windows(2).all(|w| {
        w[0].sobol.iter().zip(&w[1].sobol).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < epsilon
    })
}

// Independent streams of the run seed.
const STREAM_DESIGN: u64 = 0;
const STREAM_CANDIDATES: u64 = 1;
const STREAM_SELECTION: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Loop<'a, F> {
    f: F,
    bounds: &'a Bounds,
    config: &'a LoopConfig,
    candidates_rng: ChaCha8Rng,
    selection_rng: ChaCha8Rng,
    warnings: Vec<String>,
}

impl<F: Fn(&[f64]) -> f64> Loop<'_, F> {
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if !self.bounds.contains(x) {
            return Err(GsaError::Domain(format!("refusing to evaluate {x:?} outside the bounds")));
        }
        Ok((self.f)(x))
    }

    fn fit(&mut self, data: &TrainingSet, warm: Option<&GpModel>, iteration: usize) -> Result<GpModel> {
        let fit_config = FitConfig {
            restarts: self.config.restarts,
            seed: self.config.seed.wrapping_add(iteration as u64),
            warm_start: warm.map(|m| m.theta().to_vec()),
            ..FitConfig::default()
        };
        match GpModel::fit(data, self.config.basis, self.config.nugget, &fit_config) {
            Err(GsaError::Fit { message, best: Some(model) }) => {
                let w = format!("iteration {iteration}: {message}; using the best restart");
                log::warn!("{w}");
                self.warnings.push(w);
                Ok(*model)
            }
            other => other,
        }
    }

    fn candidates(&mut self) -> Vec<Vec<f64>> {
        let n = self.config.n_candidates;
        match self.config.candidate_design {
            CandidateDesign::Uniform => uniform_sample(n, self.bounds, &mut self.candidates_rng),
            CandidateDesign::Lhs => lhs_sample(n, self.bounds, &mut self.candidates_rng),
        }
    }

    fn estimate(&self, model: &GpModel, candidates: &[Vec<f64>], iteration: usize) -> Result<SobolEstimate> {
        match self.config.estimator {
            Method::MeanPredictor => estimate_mean_predictor(model, candidates),
            Method::FullGp => estimate_full_gp(
                model,
                candidates,
                self.config.n_grid,
                self.config.n_realizations,
                self.config.seed.wrapping_add(iteration as u64),
            ),
        }
    }

    fn select(&mut self, model: &GpModel, candidates: &[Vec<f64>], sobol: &[f64]) -> Result<Selection> {
        select_next(model, candidates, &self.config.strategy, Some(sobol), self.config.n_grid, &mut self.selection_rng)
    }
}

/// Runs the active-learning loop on `f` over `bounds`.
///
/// Errors in the configuration are returned directly; failures during the
/// run end the trace with [`TraceStatus::Error`] and keep the records made
/// so far.
pub fn run<F: Fn(&[f64]) -> f64>(f: F, bounds: &Bounds, config: &LoopConfig) -> Result<ConvergenceTrace> {
    config.validate()?;
    let mut state = Loop {
        f,
        bounds,
        config,
        candidates_rng: stream(config.seed, STREAM_CANDIDATES),
        selection_rng: stream(config.seed, STREAM_SELECTION),
        warnings: Vec::new(),
    };
    let mut trace = ConvergenceTrace {
        strategy: config.strategy.kind,
        seed: config.seed,
        dim: bounds.dim(),
        records: Vec::new(),
        status: TraceStatus::BudgetExhausted,
        message: None,
        warnings: Vec::new(),
    };
    if let Err(e) = drive(&mut state, &mut trace) {
        trace.status = TraceStatus::Error;
        trace.message = Some(e.to_string());
        log::error!("run with seed {} stopped: {e}", config.seed);
    }
    trace.warnings = state.warnings;
    Ok(trace)
}

fn drive<F: Fn(&[f64]) -> f64>(state: &mut Loop<F>, trace: &mut ConvergenceTrace) -> Result<()> {
    let config = state.config;
    let design = lhs_sample(
        config.n_initial,
        state.bounds,
        &mut stream(config.design_seed.unwrap_or(config.seed), STREAM_DESIGN),
    );
    let outputs = design.iter().map(|x| state.evaluate(x)).collect::<Result<Vec<f64>>>()?;
    let mut data = TrainingSet::new(design, outputs, state.bounds.clone())?;

    let mut iteration = 0;
    let mut clock = Instant::now();
    let mut model = state.fit(&data, None, iteration)?;
    let mut last: Option<Selection> = None;
    loop {
        let candidates = state.candidates();
        let est = state.estimate(&model, &candidates, iteration)?;
        let wall_ms = if config.timing { clock.elapsed().as_millis() as u64 } else { 0 };
        trace.records.push(TraceRecord {
            iteration,
            n_samples: data.len(),
            total_var: est.total_var,
            main_effect_vars: est.main_effect_vars.clone(),
            sobol: est.indices.clone(),
            sobol_std: est.index_std.clone(),
            selected: last.as_ref().map(|s| s.point.clone()),
            score: last.as_ref().map(|s| s.score).filter(|s| s.is_finite()),
            fallback: last.as_ref().is_some_and(|s| s.fallback),
            wall_ms,
        });
        if let Some(c) = config.convergence {
            if check_convergence(&trace.records, c.epsilon, c.patience) {
                trace.status = TraceStatus::Converged;
                return Ok(());
            }
        }
        if data.len() >= config.budget {
            trace.status = TraceStatus::BudgetExhausted;
            return Ok(());
        }

        clock = Instant::now();
        let mut pool = candidates;
        let sel = loop {
            iteration += 1;
            let mut sel = state.select(&model, &pool, &est.indices)?;
            if data.is_duplicate(&sel.point) {
                pool = state.candidates();
                sel = state.select(&model, &pool, &est.indices)?;
            }
            if !data.is_duplicate(&sel.point) {
                break sel;
            }
            let w = format!("iteration {iteration}: proposal duplicates a training input twice; skipped");
            log::warn!("{w}");
            state.warnings.push(w);
            if iteration > 2 * config.budget {
                return Err(GsaError::Selection("no new sample could be proposed".into()));
            }
            pool = state.candidates();
        };
        let y = state.evaluate(&sel.point)?;
        data.push(sel.point.clone(), y)?;
        model = state.fit(&data, Some(&model), iteration)?;
        last = Some(sel);
    }
}

impl ConvergenceTrace {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| GsaError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GsaError::Parse(e.to_string()))
    }

    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// Column names of the trace CSV for `d` inputs.
pub fn trace_csv_header(d: usize) -> String {
    let mut cols: Vec<String> = ["trial", "iter", "n", "strategy", "total_var"].map(String::from).to_vec();
    for prefix in ["mev", "s", "sq_err_s", "x_sel"] {
        cols.extend((1..=d).map(|i| format!("{prefix}_{i}")));
    }
    cols.push("score".into());
    cols.push("wall_ms".into());
    cols.join(",")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the trace as CSV rows (with the version line and header when
/// `header` is set). Squared errors are left empty without `truth`.
pub fn write_trace_csv(
    out: &mut impl Write,
    trace: &ConvergenceTrace,
    trial: usize,
    truth: Option<&[f64]>,
    header: bool,
) -> Result<()> {
    let d = trace.dim;
    if header {
        writeln!(out, "{TRACE_CSV_VERSION}")?;
        writeln!(out, "{}", trace_csv_header(d))?;
    }
    for r in &trace.records {
        let mut row = vec![
            trial.to_string(),
            r.iteration.to_string(),
            r.n_samples.to_string(),
            trace.strategy.name().to_string(),
            r.total_var.to_string(),
        ];
        row.extend(r.main_effect_vars.iter().map(|v| v.to_string()));
        row.extend(r.sobol.iter().map(|v| v.to_string()));
        row.extend((0..d).map(|i| opt(truth.map(|t| (r.sobol[i] - t[i]).powi(2)))));
        row.extend((0..d).map(|i| opt(r.selected.as_ref().map(|x| x[i]))));
        row.push(opt(r.score));
        row.push(r.wall_ms.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
