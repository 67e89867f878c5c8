//! Batch studies: repeated seeded trials of the sequential loop across
//! strategies, squared-error aggregation against the analytic indices, and
//! the CSV files behind the convergence plots.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{Strategy, StrategyKind, WeightMode};
use crate::benchmarks::{self, Benchmark, RatioCase};
use crate::driver::{self, CandidateDesign, Convergence, ConvergenceTrace, LoopConfig, TraceStatus};
use crate::error::{GsaError, Result};
use crate::gp::{Basis, NuggetMode};
use crate::sobol::Method;

pub const AGGREGATE_CSV_HEADER: &str = "strategy,n,metric,mse,std";
pub const RATIO_SURFACE_CSV_HEADER: &str = "case,s,y,delta_a,delta_y,delta_s";

/// Files a study writes besides its summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Trace,
    Aggregate,
    RatioSurface,
}

/// A study: one benchmark, several strategies, `n_trials` seeded trials
/// each. Loaded from flat TOML with exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub benchmark: String,
    pub strategies: Vec<StrategyKind>,
    pub n_trials: usize,
    /// Trial `k` runs with seed `seed + k`.
    pub seed: u64,
    pub n_initial: usize,
    pub budget: usize,
    pub n_candidates: usize,
    pub n_grid: usize,
    /// Stop a trial early once the indices settle; `None` runs every trial
    /// to the budget so all traces align.
    pub epsilon: Option<f64>,
    pub patience: usize,
    pub estimator: Method,
    pub n_realizations: usize,
    pub candidate_design: CandidateDesign,
    pub basis: Basis,
    pub nugget: NuggetMode,
    pub restarts: usize,
    pub weights: WeightMode,
    /// Share each trial's initial design across strategies. Otherwise every
    /// strategy draws its own.
    pub paired: bool,
    pub timing: bool,
    pub out: PathBuf,
    pub emit: Vec<Emit>,
    /// Points per axis of the emitted ratio-error surfaces.
    pub surface_points: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let l = LoopConfig::default();
        StudyConfig {
            benchmark: "ishigami".into(),
            strategies: vec![StrategyKind::Random],
            n_trials: 1,
            seed: 0,
            n_initial: l.n_initial,
            budget: l.budget,
            n_candidates: l.n_candidates,
            n_grid: l.n_grid,
            epsilon: None,
            patience: Convergence::default().patience,
            estimator: l.estimator,
            n_realizations: l.n_realizations,
            candidate_design: l.candidate_design,
            basis: l.basis,
            nugget: l.nugget,
            restarts: l.restarts,
            weights: WeightMode::default(),
            paired: false,
            timing: false,
            out: PathBuf::from("results"),
            emit: vec![Emit::Trace, Emit::Aggregate],
            surface_points: 101,
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GsaError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GsaError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        benchmarks::by_name(&self.benchmark)?;
        if self.n_trials == 0 {
            return Err(GsaError::invalid("n_trials must be at least 1"));
        }
        if self.strategies.is_empty() {
            return Err(GsaError::invalid("no strategies given"));
        }
        if self.surface_points < 2 {
            return Err(GsaError::invalid("surface_points must be at least 2"));
        }
        self.loop_config(StrategyKind::Random, 0).validate()
    }

    /// Loop settings of one trial.
    pub fn loop_config(&self, kind: StrategyKind, trial: usize) -> LoopConfig {
        let seed = self.seed.wrapping_add(trial as u64);
        LoopConfig {
            n_initial: self.n_initial,
            budget: self.budget,
            n_candidates: self.n_candidates,
            n_grid: self.n_grid,
            strategy: Strategy { kind, weights: self.weights.clone() },
            convergence: self.epsilon.map(|epsilon| Convergence { epsilon, patience: self.patience }),
            seed,
            design_seed: if self.paired { None } else { Some(design_seed(seed, kind)) },
            estimator: self.estimator,
            n_realizations: self.n_realizations,
            candidate_design: self.candidate_design,
            basis: self.basis,
            nugget: self.nugget,
            restarts: self.restarts,
            timing: self.timing,
        }
    }
}

/// Per-strategy design seed, fixed by the strategy itself so a trial's
/// design does not depend on which other strategies share the study.
fn design_seed(seed: u64, kind: StrategyKind) -> u64 {
    let pos = StrategyKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(16 + pos);
    rng.next_u64()
}

/// Analytic targets of a benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub total_var: f64,
    pub main_effect_vars: Vec<f64>,
    pub sobol: Vec<f64>,
}

impl Truth {
    pub fn of(b: &Benchmark) -> Self {
        Truth {
            total_var: b.analytic_total_var(),
            main_effect_vars: b.analytic_main_vars().to_vec(),
            sobol: b.analytic_sobol(),
        }
    }
}

/// Mean and spread of one squared-error metric over trials at one sample
/// count. `std` is absent for a single trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub strategy: StrategyKind,
    pub n: usize,
    pub metric: String,
    pub mse: f64,
    pub std: Option<f64>,
}

fn metric_names(d: usize) -> Vec<String> {
    let mut names = vec!["total_var".to_string()];
    names.extend((1..=d).map(|i| format!("mev_{i}")));
    names.extend((1..=d).map(|i| format!("s_{i}")));
    names
}

/// Squared errors against `truth` at every record, grouped by strategy in
/// order of first appearance. Traces of a strategy are compared over their
/// common prefix, which must agree on the sample count at every step.
pub fn aggregate(traces: &[ConvergenceTrace], truth: &Truth) -> Result<Vec<AggregateRecord>> {
    let d = truth.sobol.len();
    if truth.main_effect_vars.len() != d {
        return Err(GsaError::invalid("truth vectors differ in length"));
    }
    let mut order: Vec<StrategyKind> = Vec::new();
    for t in traces {
        if t.dim != d {
            return Err(GsaError::Alignment(format!("trace of dimension {} against truth of dimension {d}", t.dim)));
        }
        if !order.contains(&t.strategy) {
            order.push(t.strategy);
        }
    }
    let names = metric_names(d);
    let mut out = Vec::new();
    for kind in order {
        let group: Vec<&ConvergenceTrace> = traces.iter().filter(|t| t.strategy == kind).collect();
        let len = group.iter().map(|t| t.records.len()).min().unwrap_or(0);
        for step in 0..len {
            let n = group[0].records[step].n_samples;
            if let Some(t) = group.iter().find(|t| t.records[step].n_samples != n) {
                return Err(GsaError::Alignment(format!(
                    "{kind}: record {step} has {} samples in trace seeded {} but {n} in trace seeded {}",
                    t.records[step].n_samples, t.seed, group[0].seed
                )));
            }
            // errors[metric][trial]
            let mut errors = vec![Vec::with_capacity(group.len()); names.len()];
            for t in &group {
                let r = &t.records[step];
                errors[0].push((r.total_var - truth.total_var).powi(2));
                for i in 0..d {
                    errors[1 + i].push((r.main_effect_vars[i] - truth.main_effect_vars[i]).powi(2));
                    errors[1 + d + i].push((r.sobol[i] - truth.sobol[i]).powi(2));
                }
            }
            for (metric, e) in names.iter().zip(&errors) {
                let (mse, std) = mean_std(e);
                out.push(AggregateRecord { strategy: kind, n, metric: metric.clone(), mse, std });
            }
        }
    }
    Ok(out)
}

fn mean_std(v: &[f64]) -> (f64, Option<f64>) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, Some(var.sqrt()))
}

/// Long-format CSV of an aggregate. Floats are written in shortest
/// round-trip form, and a missing std is an empty field.
pub fn emit_plot_data(out: &mut impl Write, records: &[AggregateRecord]) -> Result<()> {
    writeln!(out, "{AGGREGATE_CSV_HEADER}")?;
    for r in records {
        let std = r.std.map(|s| s.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.strategy, r.n, r.metric, r.mse, std)?;
    }
    Ok(())
}

/// Reads back a file written by [`emit_plot_data`].
pub fn parse_plot_data(text: &str) -> Result<Vec<AggregateRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == AGGREGATE_CSV_HEADER => {}
        other => return Err(GsaError::Parse(format!("unexpected aggregate header {other:?}"))),
    }
    let bad = |line: &str| GsaError::Parse(format!("bad aggregate row {line:?}"));
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            Ok(AggregateRecord {
                strategy: f[0].parse()?,
                n: f[1].parse().map_err(|_| bad(line))?,
                metric: f[2].to_string(),
                mse: f[3].parse().map_err(|_| bad(line))?,
                std: if f[4].is_empty() { None } else { Some(f[4].parse().map_err(|_| bad(line))?) },
            })
        })
        .collect()
}

/// `points` evenly spaced values from 0 to `max`.
pub fn linspace(max: f64, points: usize) -> Vec<f64> {
    let last = (points.max(2) - 1) as f64;
    (0..points).map(|k| max * k as f64 / last).collect()
}

/// Rows of a ratio-error surface, `delta_a` varying slowest.
pub fn write_ratio_surface(
    out: &mut impl Write,
    s: f64,
    y: f64,
    da_grid: &[f64],
    dy_grid: &[f64],
    case: RatioCase,
) -> Result<()> {
    let surface = benchmarks::ratio_error_surface(s, y, da_grid, dy_grid, case)?;
    for (row, da) in surface.iter().zip(da_grid) {
        for (e, dy) in row.iter().zip(dy_grid) {
            writeln!(out, "{},{s},{y},{da},{dy},{e}", case.number())?;
        }
    }
    Ok(())
}

/// How one trial ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub strategy: StrategyKind,
    pub trial: usize,
    pub seed: u64,
    pub status: TraceStatus,
    pub records: usize,
    pub message: Option<String>,
    pub warnings: usize,
}

/// Written as `summary.json` next to the other outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub config: StudyConfig,
    pub trials: Vec<TrialSummary>,
    /// Failed trials are left out of the aggregate.
    pub failed: usize,
    pub files: Vec<PathBuf>,
}

pub struct StudyOutcome {
    pub summary: StudySummary,
    pub traces: Vec<ConvergenceTrace>,
    pub aggregate: Vec<AggregateRecord>,
}

/// Runs every (strategy, trial) pair on up to `jobs` threads (0 picks the
/// rayon default) and writes the requested files under `config.out`.
/// Outputs depend only on the config, never on scheduling.
pub fn run_study(config: &StudyConfig, jobs: usize) -> Result<StudyOutcome> {
    config.validate()?;
    let bench = benchmarks::by_name(&config.benchmark)?;
    let truth = Truth::of(&bench);
    let tasks: Vec<(StrategyKind, usize)> =
        config.strategies.iter().flat_map(|k| (0..config.n_trials).map(move |t| (*k, t))).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| GsaError::invalid(format!("thread pool: {e}")))?;
    let traces: Vec<ConvergenceTrace> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(kind, trial)| {
                let cfg = config.loop_config(kind, trial);
                log::info!("{} {kind} trial {trial} (seed {})", config.benchmark, cfg.seed);
                driver::run(|x| bench.evaluate(x), bench.bounds(), &cfg)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let trials: Vec<TrialSummary> = tasks
        .iter()
        .zip(&traces)
        .map(|(&(strategy, trial), t)| TrialSummary {
            strategy,
            trial,
            seed: t.seed,
            status: t.status,
            records: t.records.len(),
            message: t.message.clone(),
            warnings: t.warnings.len(),
        })
        .collect();
    let failed = trials.iter().filter(|t| t.status == TraceStatus::Error).count();
    for t in trials.iter().filter(|t| t.status == TraceStatus::Error) {
        log::warn!("{} trial {} failed: {}", t.strategy, t.trial, t.message.as_deref().unwrap_or(""));
    }
    let healthy: Vec<ConvergenceTrace> =
        traces.iter().filter(|t| t.status != TraceStatus::Error).cloned().collect();
    let aggregate = aggregate(&healthy, &truth)?;

    fs::create_dir_all(&config.out)?;
    let mut files = Vec::new();
    if config.emit.contains(&Emit::Trace) {
        for (&(kind, trial), t) in tasks.iter().zip(&traces) {
            let rel = PathBuf::from("traces").join(kind.name()).join(format!("trial_{trial:04}.csv"));
            let mut buf = Vec::new();
            driver::write_trace_csv(&mut buf, t, trial, Some(&truth.sobol), true)?;
            write_atomic(&config.out.join(&rel), &buf)?;
            files.push(rel);
        }
    }
    if config.emit.contains(&Emit::Aggregate) {
        let mut buf = Vec::new();
        emit_plot_data(&mut buf, &aggregate)?;
        write_atomic(&config.out.join("aggregate.csv"), &buf)?;
        files.push("aggregate.csv".into());
    }
    if config.emit.contains(&Emit::RatioSurface) {
        // One surface per input and case around the analytic values, with
        // both errors up to half the total variance.
        let grid = linspace(0.5 * truth.total_var, config.surface_points);
        let mut buf = Vec::new();
        writeln!(buf, "{RATIO_SURFACE_CSV_HEADER}")?;
        for s in &truth.sobol {
            for case in RatioCase::ALL {
                write_ratio_surface(&mut buf, *s, truth.total_var, &grid, &grid, case)?;
            }
        }
        write_atomic(&config.out.join("ratio_surface.csv"), &buf)?;
        files.push("ratio_surface.csv".into());
    }
    files.push("summary.json".into());
    let summary = StudySummary { config: config.clone(), trials, failed, files };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| GsaError::Parse(e.to_string()))?;
    write_atomic(&config.out.join("summary.json"), json.as_bytes())?;
    Ok(StudyOutcome { summary, traces, aggregate })
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Count of trials per final status, for reporting.
pub fn status_counts(summary: &StudySummary) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in &summary.trials {
        let name = serde_json::to_value(t.status).ok().and_then(|v| v.as_str().map(String::from));
        *m.entry(name.unwrap_or_default()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests;
