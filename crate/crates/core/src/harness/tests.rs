use super::*;
use crate::driver::TraceRecord;

fn record(n: usize, total_var: f64, sobol: Vec<f64>) -> TraceRecord {
    TraceRecord {
        iteration: n,
        n_samples: n,
        total_var,
        main_effect_vars: sobol.iter().map(|s| s * total_var).collect(),
        sobol,
        sobol_std: None,
        selected: None,
        score: None,
        fallback: false,
        wall_ms: 0,
    }
}

fn trace(kind: StrategyKind, seed: u64, records: Vec<TraceRecord>) -> ConvergenceTrace {
    ConvergenceTrace {
        strategy: kind,
        seed,
        dim: records[0].sobol.len(),
        records,
        status: TraceStatus::BudgetExhausted,
        message: None,
        warnings: vec![],
    }
}

fn truth1() -> Truth {
    Truth { total_var: 1.0, main_effect_vars: vec![0.5], sobol: vec![0.5] }
}

fn find<'a>(a: &'a [AggregateRecord], n: usize, metric: &str) -> &'a AggregateRecord {
    a.iter().find(|r| r.n == n && r.metric == metric).unwrap()
}

fn tiny_study(out: &Path) -> StudyConfig {
    StudyConfig {
        benchmark: "sqexp2".into(),
        strategies: vec![StrategyKind::Random, StrategyKind::Vigf],
        n_trials: 2,
        seed: 3,
        n_initial: 5,
        budget: 8,
        n_candidates: 200,
        n_grid: 16,
        restarts: 1,
        out: out.to_path_buf(),
        emit: vec![Emit::Trace, Emit::Aggregate],
        ..StudyConfig::default()
    }
}

#[test]
fn identical_trials_give_the_squared_error_and_zero_std() {
    let e = 0.1;
    let ts: Vec<_> = (0..3).map(|s| trace(StrategyKind::Eigf, s, vec![record(5, 1.0, vec![0.5 + e])])).collect();
    let a = aggregate(&ts, &truth1()).unwrap();
    assert_eq!(a.len(), 3);
    let s = find(&a, 5, "s_1");
    assert!((s.mse - e * e).abs() < 1e-15);
    assert_eq!(s.std, Some(0.0));
    assert_eq!(find(&a, 5, "total_var").mse, 0.0);
}

#[test]
fn two_trials_hand_example() {
    // Errors 0 and 2 in the total variance.
    let ts = vec![
        trace(StrategyKind::Random, 0, vec![record(4, 1.0, vec![0.5])]),
        trace(StrategyKind::Random, 1, vec![record(4, 3.0, vec![0.5])]),
    ];
    let a = aggregate(&ts, &truth1()).unwrap();
    let r = find(&a, 4, "total_var");
    assert_eq!(r.mse, 2.0);
    assert!((r.std.unwrap() - 2.828_427_124_746_19).abs() < 1e-12);
}

#[test]
fn exact_estimates_aggregate_to_zero_and_one_trial_has_no_std() {
    let t = trace(StrategyKind::Vigf, 0, vec![record(3, 1.0, vec![0.5]), record(4, 1.0, vec![0.5])]);
    let a = aggregate(&[t], &truth1()).unwrap();
    assert_eq!(a.len(), 6);
    assert!(a.iter().all(|r| r.mse == 0.0 && r.std.is_none()));
}

#[test]
fn misaligned_traces_are_rejected() {
    let ts = vec![
        trace(StrategyKind::Random, 0, vec![record(4, 1.0, vec![0.5])]),
        trace(StrategyKind::Random, 1, vec![record(5, 1.0, vec![0.5])]),
    ];
    assert!(matches!(aggregate(&ts, &truth1()), Err(GsaError::Alignment(_))));
    let wide = trace(StrategyKind::Random, 0, vec![record(4, 1.0, vec![0.5, 0.1])]);
    assert!(matches!(aggregate(&[wide], &truth1()), Err(GsaError::Alignment(_))));
    // Different lengths are compared over the common prefix.
    let ts = vec![
        trace(StrategyKind::Random, 0, vec![record(4, 1.0, vec![0.5]), record(5, 1.0, vec![0.5])]),
        trace(StrategyKind::Random, 1, vec![record(4, 1.0, vec![0.5])]),
    ];
    assert_eq!(aggregate(&ts, &truth1()).unwrap().len(), 3);
}

#[test]
fn plot_data_round_trips() {
    let mut buf = Vec::new();
    emit_plot_data(&mut buf, &[]).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap(), "strategy,n,metric,mse,std\n");
    assert!(parse_plot_data(std::str::from_utf8(&buf).unwrap()).unwrap().is_empty());

    let ts = vec![
        trace(StrategyKind::MusicVigfD2, 0, vec![record(4, 1.1, vec![0.3]), record(5, 0.7, vec![1.0 / 3.0])]),
        trace(StrategyKind::MusicVigfD2, 1, vec![record(4, 0.9, vec![0.45]), record(5, 1.3, vec![0.1])]),
        trace(StrategyKind::Random, 0, vec![record(4, 2.0, vec![0.6])]),
    ];
    let a = aggregate(&ts, &truth1()).unwrap();
    let mut buf = Vec::new();
    emit_plot_data(&mut buf, &a).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(parse_plot_data(&text).unwrap(), a);
    assert!(text.lines().nth(1).unwrap().starts_with("music-vigf-d2,4,total_var,"));
    assert!(text.lines().last().unwrap().ends_with(','));
    assert!(parse_plot_data("strategy,n\n").is_err());
    assert!(parse_plot_data("strategy,n,metric,mse,std\nrandom,x,s_1,0,\n").is_err());
}

#[test]
fn ratio_surface_rows() {
    let grid = linspace(0.5, 101);
    assert_eq!(grid[100], 0.5);
    let mut buf = Vec::new();
    write_ratio_surface(&mut buf, 0.8, 1.0, &grid, &grid, RatioCase::BothUnder).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 10201);
    let first: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(first, vec!["1", "0.8", "1", "0", "0", "0"]);
}

#[test]
fn config_toml_round_trip_and_validation() {
    let text = r#"
benchmark = "gfunction"
strategies = ["random", "music-vigf-d2", "music-cw"]
n_trials = 4
seed = 42
budget = 40
epsilon = 0.01
estimator = "full_gp"
emit = ["aggregate", "ratio_surface"]
"#;
    let c = StudyConfig::from_toml(text).unwrap();
    assert_eq!(c.strategies.len(), 3);
    assert_eq!(c.epsilon, Some(0.01));
    assert_eq!(c.estimator, Method::FullGp);
    assert_eq!(c.n_initial, 10);
    c.validate().unwrap();
    assert_eq!(StudyConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    assert_eq!(c.loop_config(StrategyKind::Random, 3).seed, 45);

    assert!(matches!(StudyConfig::from_toml("trials = 3"), Err(GsaError::Parse(_))));
    assert!(StudyConfig::from_toml("strategies = [\"best\"]").is_err());
    let bad = StudyConfig { benchmark: "nope".into(), ..StudyConfig::default() };
    assert!(matches!(bad.validate(), Err(GsaError::UnknownName(_))));
    assert!(StudyConfig { n_trials: 0, ..StudyConfig::default() }.validate().is_err());
    assert!(StudyConfig { strategies: vec![], ..StudyConfig::default() }.validate().is_err());
}

#[test]
fn pairing_controls_the_initial_design() {
    let c = StudyConfig { paired: true, ..StudyConfig::default() };
    assert_eq!(c.loop_config(StrategyKind::Random, 1).design_seed, None);
    let c = StudyConfig { paired: false, ..c };
    let a = c.loop_config(StrategyKind::Random, 1).design_seed.unwrap();
    let b = c.loop_config(StrategyKind::Vigf, 1).design_seed.unwrap();
    assert_ne!(a, b);
    assert_eq!(a, c.loop_config(StrategyKind::Random, 1).design_seed.unwrap());
}

#[test]
fn study_writes_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_study(&dir.path().join("a"));
    let first = run_study(&cfg, 1).unwrap();
    assert_eq!(first.summary.failed, 0);
    // 2 strategies, 4 records each, 1 + 2 + 2 metrics.
    assert_eq!(first.aggregate.len(), 2 * 4 * 5);
    assert_eq!(first.summary.files.len(), 4 + 1 + 1);

    let cfg_b = StudyConfig { out: dir.path().join("b"), ..cfg.clone() };
    run_study(&cfg_b, 3).unwrap();
    for f in ["aggregate.csv", "traces/vigf/trial_0001.csv", "traces/random/trial_0000.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let text = fs::read_to_string(dir.path().join("a/aggregate.csv")).unwrap();
    assert_eq!(parse_plot_data(&text).unwrap(), first.aggregate);
}

/// The first aggregate row of a paired study comes from the shared initial
/// design alone, so it is the same for every strategy.
#[test]
fn paired_initial_rows_match_across_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = StudyConfig { paired: true, budget: 6, emit: vec![], ..tiny_study(dir.path()) };
    let out = run_study(&cfg, 1).unwrap();
    let first: Vec<&AggregateRecord> = out.aggregate.iter().filter(|r| r.n == 5).collect();
    assert_eq!(first.len(), 10);
    for (r, v) in first[..5].iter().zip(&first[5..]) {
        assert_eq!(r.mse, v.mse, "{}", r.metric);
    }
    let truth = Truth::of(&benchmarks::by_name("sqexp2").unwrap());
    let direct: Vec<f64> = out.traces[..2].iter().map(|t| (t.records[0].sobol[0] - truth.sobol[0]).powi(2)).collect();
    assert_eq!(first[3].mse, (direct[0] + direct[1]) / 2.0);
    assert_eq!(out.summary.files, vec![PathBuf::from("summary.json")]);
}

#[test]
fn budget_equal_to_design_gives_one_row_per_strategy_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = StudyConfig { n_trials: 1, budget: 5, ..tiny_study(dir.path()) };
    let out = run_study(&cfg, 2).unwrap();
    assert_eq!(out.aggregate.len(), 2 * 5);
    assert!(out.aggregate.iter().all(|r| r.n == 5 && r.std.is_none()));
    assert_eq!(status_counts(&out.summary).get("budget_exhausted"), Some(&2));
}
