use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gsax::acquisition::{StrategyKind, WeightMode};
use gsax::benchmarks::{self, RatioCase};
use gsax::driver::CandidateDesign;
use gsax::harness::{self, Emit, StudyConfig};
use gsax::sobol::Method;
use gsax::GsaError;

const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Sobol index estimation with sequentially trained Gaussian-process surrogates.
#[derive(Parser)]
#[command(name = "gsax", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a study: repeated seeded trials of one or more strategies on a benchmark.
    Run(RunArgs),
    /// Tabulate the error of a variance ratio over numerator and denominator errors.
    RatioSurface(SurfaceArgs),
    /// List benchmarks and strategies.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Mean,
    FullGp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Design {
    Uniform,
    Lhs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weights {
    Uniform,
    Sobol,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmitArg {
    Trace,
    Aggregate,
    RatioSurface,
}

/// Flags override values from `--config`.
#[derive(Args)]
struct RunArgs {
    /// TOML study file with the field names of the study config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    /// Strategy name; repeat or separate with commas.
    #[arg(long = "strategy", value_delimiter = ',')]
    strategies: Vec<String>,
    /// Initial design size.
    #[arg(long)]
    initial: Option<usize>,
    /// Total evaluations per trial.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    /// Grid points per input for the main effects.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel trials (0 uses every core).
    #[arg(long, env = "GSAX_JOBS", default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    estimator: Option<Estimator>,
    /// Realizations per input for the full-GP estimator.
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long, value_enum)]
    candidate_design: Option<Design>,
    /// MUSIC input weights.
    #[arg(long, value_enum)]
    weights: Option<Weights>,
    /// Random starts per likelihood search.
    #[arg(long)]
    restarts: Option<usize>,
    /// Stop a trial once the indices move less than this for `--patience` steps.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Share initial designs across strategies within a trial.
    #[arg(long)]
    paired: bool,
    /// Record wall time per iteration (outputs are then no longer reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long, value_enum, value_delimiter = ',')]
    emit: Vec<EmitArg>,
}

#[derive(Args)]
struct SurfaceArgs {
    /// True index value.
    #[arg(long)]
    s: f64,
    /// Error case 1 to 4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    case: u8,
    /// True denominator (total variance).
    #[arg(long, default_value_t = 1.0)]
    y: f64,
    #[arg(long, default_value_t = 0.5)]
    da_max: f64,
    #[arg(long, default_value_t = 0.5)]
    dy_max: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 101)]
    points: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &GsaError) -> u8 {
    match e {
        GsaError::InvalidParameter(_) | GsaError::UnknownName(_) | GsaError::Parse(_) | GsaError::Domain(_) => {
            EXIT_USAGE
        }
        _ => EXIT_RUNTIME,
    }
}

fn study_config(a: &RunArgs) -> gsax::Result<StudyConfig> {
    let mut c = match &a.config {
        Some(path) => StudyConfig::from_toml(&fs::read_to_string(path)?)?,
        None => StudyConfig::default(),
    };
    if let Some(v) = &a.benchmark {
        c.benchmark = v.clone();
    }
    if !a.strategies.is_empty() {
        c.strategies = a.strategies.iter().map(|s| s.parse()).collect::<gsax::Result<_>>()?;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { c.$field = v; })*
        };
    }
    set!(initial => n_initial, budget => budget, candidates => n_candidates, grid => n_grid,
         trials => n_trials, seed => seed, realizations => n_realizations, restarts => restarts,
         patience => patience);
    if let Some(v) = &a.out {
        c.out = v.clone();
    }
    if a.epsilon.is_some() {
        c.epsilon = a.epsilon;
    }
    if let Some(e) = a.estimator {
        c.estimator = match e {
            Estimator::Mean => Method::MeanPredictor,
            Estimator::FullGp => Method::FullGp,
        };
    }
    if let Some(d) = a.candidate_design {
        c.candidate_design = match d {
            Design::Uniform => CandidateDesign::Uniform,
            Design::Lhs => CandidateDesign::Lhs,
        };
    }
    if let Some(w) = a.weights {
        c.weights = match w {
            Weights::Uniform => WeightMode::Uniform,
            Weights::Sobol => WeightMode::SobolProportional,
        };
    }
    c.paired |= a.paired;
    c.timing |= a.timing;
    if !a.emit.is_empty() {
        c.emit = a
            .emit
            .iter()
            .map(|e| match e {
                EmitArg::Trace => Emit::Trace,
                EmitArg::Aggregate => Emit::Aggregate,
                EmitArg::RatioSurface => Emit::RatioSurface,
            })
            .collect();
    }
    c.validate()?;
    Ok(c)
}

fn run(a: &RunArgs) -> Result<u8, GsaError> {
    let config = study_config(a)?;
    let outcome = harness::run_study(&config, a.jobs)?;
    let s = &outcome.summary;
    println!("{}: {} trials written to {}", config.benchmark, s.trials.len(), config.out.display());
    for (status, count) in harness::status_counts(s) {
        println!("  {status}: {count}");
    }
    for kind in &config.strategies {
        let last_n = outcome.aggregate.iter().filter(|r| r.strategy == *kind).map(|r| r.n).max();
        if let Some(n) = last_n {
            let mse: Vec<String> = outcome
                .aggregate
                .iter()
                .filter(|r| r.strategy == *kind && r.n == n && r.metric.starts_with("s_"))
                .map(|r| format!("{:.3e}", r.mse))
                .collect();
            println!("  {kind} at n = {n}: index MSE [{}]", mse.join(", "));
        }
    }
    if s.failed > 0 {
        eprintln!("{} trial(s) failed; see summary.json", s.failed);
        return Ok(EXIT_RUNTIME);
    }
    Ok(0)
}

fn ratio_surface(a: &SurfaceArgs) -> Result<u8, GsaError> {
    if a.points < 2 {
        return Err(GsaError::InvalidParameter("need at least two points per axis".into()));
    }
    let case = RatioCase::from_number(a.case)?;
    let mut buf = Vec::new();
    writeln!(buf, "{}", harness::RATIO_SURFACE_CSV_HEADER)?;
    harness::write_ratio_surface(
        &mut buf,
        a.s,
        a.y,
        &harness::linspace(a.da_max, a.points),
        &harness::linspace(a.dy_max, a.points),
        case,
    )?;
    match &a.out {
        Some(path) => harness::write_atomic(path, &buf)?,
        None => io::stdout().write_all(&buf)?,
    }
    Ok(0)
}

fn list() -> Result<u8, GsaError> {
    println!("benchmarks:");
    for name in benchmarks::NAMES {
        let b = benchmarks::by_name(name)?;
        let s: Vec<String> = b.analytic_sobol().iter().map(|v| format!("{v:.4}")).collect();
        println!("  {name:<12} d = {:<3} S = [{}]", b.dim(), s.join(", "));
    }
    println!("strategies:");
    for kind in StrategyKind::ALL {
        println!("  {kind}");
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::RatioSurface(a) => ratio_surface(a),
        Command::List => list(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
