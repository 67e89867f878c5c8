use super::*;

fn small_config(strategy: StrategyKind, seed: u64) -> LoopConfig {
    LoopConfig {
        n_initial: 6,
        budget: 12,
        n_candidates: 300,
        n_grid: 32,
        strategy: Strategy::new(strategy),
        convergence: None,
        seed,
        restarts: 2,
        ..LoopConfig::default()
    }
}

fn branin_like(x: &[f64]) -> f64 {
    (x[0] * 2.0).sin() + 0.5 * x[1] * x[1] + 0.2 * x[0] * x[1]
}

fn square() -> Bounds {
    Bounds::new(vec![-1.0, 0.0], vec![2.0, 1.5]).unwrap()
}

fn record(n: usize, sobol: Vec<f64>) -> TraceRecord {
    TraceRecord {
        iteration: n,
        n_samples: n + 2,
        total_var: 1.0,
        main_effect_vars: sobol.clone(),
        sobol,
        sobol_std: None,
        selected: None,
        score: None,
        fallback: false,
        wall_ms: 0,
    }
}

#[test]
fn lhs_places_one_point_per_stratum() {
    let b = Bounds::cube(1, 0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut strata: Vec<usize> = lhs_sample(4, &b, &mut rng).iter().map(|x| (x[0] * 4.0) as usize).collect();
    strata.sort();
    assert_eq!(strata, vec![0, 1, 2, 3]);

    let b3 = Bounds::new(vec![-2.0, 0.0, 5.0], vec![2.0, 0.1, 6.0]).unwrap();
    let pts = lhs_sample(7, &b3, &mut rng);
    for k in 0..3 {
        let mut s: Vec<usize> = pts.iter().map(|x| (b3.to_unit_coord(k, x[k]) * 7.0) as usize).collect();
        s.sort();
        assert_eq!(s, (0..7).collect::<Vec<_>>());
    }
    let one = lhs_sample(1, &b3, &mut rng);
    assert_eq!(one.len(), 1);
    assert!(b3.contains(&one[0]));
}

/// Pooled marginal histogram of many small designs against the uniform law.
#[test]
fn lhs_marginals_are_uniform() {
    let b = Bounds::cube(2, 0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bins = 20;
    let mut counts = vec![0usize; bins];
    for _ in 0..1000 {
        for x in lhs_sample(3, &b, &mut rng) {
            counts[((x[1] * bins as f64) as usize).min(bins - 1)] += 1;
        }
    }
    let expected = 3000.0 / bins as f64;
    let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 19 degrees of freedom.
    assert!(chi2 < 36.19, "{chi2}: {counts:?}");
}

#[test]
fn convergence_rule() {
    let constant: Vec<TraceRecord> = (0..4).map(|k| record(k, vec![0.3, 0.6])).collect();
    assert!(!check_convergence(&constant[..3], 0.01, 3));
    assert!(check_convergence(&constant, 0.01, 3));

    let eps = 0.01;
    let osc: Vec<TraceRecord> = (0..12).map(|k| record(k, vec![0.5 + if k % 2 == 0 { eps } else { -eps }])).collect();
    for n in 1..=osc.len() {
        assert!(!check_convergence(&osc[..n], eps, 3));
    }

    // Successive deltas 0.2, 0.05, 0.009, 0.008, 0.007.
    let mut s = 0.0;
    let mut recs = vec![record(0, vec![s])];
    for (k, d) in [0.2, 0.05, 0.009, 0.008, 0.007].iter().enumerate() {
        s += d;
        recs.push(record(k + 1, vec![s]));
    }
    let hits: Vec<bool> = (1..=recs.len()).map(|n| check_convergence(&recs[..n], 0.01, 3)).collect();
    assert_eq!(hits, vec![false, false, false, false, false, true]);
}

#[test]
fn budget_equal_to_design_gives_one_record() {
    let cfg = LoopConfig { budget: 6, ..small_config(StrategyKind::Eigf, 3) };
    let t = run(branin_like, &square(), &cfg).unwrap();
    assert_eq!(t.records.len(), 1);
    assert_eq!(t.status, TraceStatus::BudgetExhausted);
    assert_eq!(t.records[0].n_samples, 6);
    assert!(t.records[0].selected.is_none());
}

#[test]
fn every_strategy_keeps_the_bookkeeping() {
    let b = square();
    for kind in StrategyKind::ALL {
        let t = run(branin_like, &b, &small_config(kind, 4)).unwrap();
        assert_eq!(t.status, TraceStatus::BudgetExhausted, "{kind}: {:?}", t.message);
        assert_eq!(t.records.len(), 7, "{kind}");
        for (k, r) in t.records.iter().enumerate() {
            assert_eq!(r.n_samples, 6 + k);
            assert_eq!(r.sobol.len(), 2);
            if k > 0 {
                let x = r.selected.as_ref().unwrap();
                assert!(b.contains(x), "{kind}: {x:?}");
                assert_eq!(r.score.is_some(), kind != StrategyKind::Random, "{kind}");
            }
        }
    }
}

#[test]
fn same_seed_same_trace() {
    for kind in [StrategyKind::MusicVigfD2, StrategyKind::Random, StrategyKind::MusicComponentwise] {
        let a = run(branin_like, &square(), &small_config(kind, 5)).unwrap();
        let b = run(branin_like, &square(), &small_config(kind, 5)).unwrap();
        assert_eq!(a, b);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_trace_csv(&mut ca, &a, 0, Some(&[0.5, 0.5]), true).unwrap();
        write_trace_csv(&mut cb, &b, 0, Some(&[0.5, 0.5]), true).unwrap();
        assert_eq!(ca, cb);
        let c = run(branin_like, &square(), &small_config(kind, 6)).unwrap();
        assert_ne!(a.records, c.records);
    }
}

#[test]
fn trace_json_round_trips() {
    let t = run(branin_like, &square(), &small_config(StrategyKind::MusicEigfD1, 7)).unwrap();
    let back = ConvergenceTrace::from_json(&t.to_json().unwrap()).unwrap();
    assert_eq!(back, t);
    let random = run(branin_like, &square(), &small_config(StrategyKind::Random, 7)).unwrap();
    assert_eq!(ConvergenceTrace::from_json(&random.to_json().unwrap()).unwrap(), random);
    assert!(t.to_json().unwrap().contains("\"music-eigf-d1\""));
}

#[test]
fn trace_csv_layout() {
    assert_eq!(
        trace_csv_header(2),
        "trial,iter,n,strategy,total_var,mev_1,mev_2,s_1,s_2,sq_err_s_1,sq_err_s_2,x_sel_1,x_sel_2,score,wall_ms"
    );
    let t = run(branin_like, &square(), &small_config(StrategyKind::Vigf, 8)).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &t, 3, None, true).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], TRACE_CSV_VERSION);
    assert_eq!(lines.len(), 2 + t.records.len());
    let first: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(first.len(), 15);
    assert_eq!(&first[..4], &["3", "0", "6", "vigf"]);
    // No truth, no selection and no score on the initial row.
    assert!(first[9..14].iter().all(|f| f.is_empty()));
    let second: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(second[5].parse::<f64>().unwrap(), t.records[1].main_effect_vars[0]);
    assert_eq!(second[11].parse::<f64>().unwrap(), t.records[1].selected.as_ref().unwrap()[0]);
}

#[test]
fn loose_tolerance_converges_early() {
    let cfg = LoopConfig { convergence: Some(Convergence { epsilon: 2.0, patience: 2 }), ..small_config(StrategyKind::Eigf, 9) };
    let t = run(branin_like, &square(), &cfg).unwrap();
    assert_eq!(t.status, TraceStatus::Converged);
    assert_eq!(t.records.len(), 3);
}

#[test]
fn failures_end_the_trace_with_an_error() {
    let t = run(|_| 1.5, &square(), &small_config(StrategyKind::Eigf, 10)).unwrap();
    assert_eq!(t.status, TraceStatus::Error);
    assert!(t.records.is_empty());
    assert!(t.message.unwrap().contains("degenerate"));

    assert!(run(branin_like, &square(), &LoopConfig { n_initial: 1, ..small_config(StrategyKind::Eigf, 0) }).is_err());
    assert!(run(branin_like, &square(), &LoopConfig { budget: 3, ..small_config(StrategyKind::Eigf, 0) }).is_err());
    let bad = LoopConfig { convergence: Some(Convergence { epsilon: 0.0, patience: 1 }), ..small_config(StrategyKind::Eigf, 0) };
    assert!(bad.validate().is_err());
}

#[test]
fn full_gp_estimator_records_standard_deviations() {
    let cfg = LoopConfig { estimator: Method::FullGp, n_realizations: 50, budget: 8, ..small_config(StrategyKind::Vigf, 11) };
    let t = run(branin_like, &square(), &cfg).unwrap();
    assert_eq!(t.status, TraceStatus::BudgetExhausted);
    for r in &t.records {
        assert!(r.sobol_std.as_ref().unwrap().iter().all(|s| *s >= 0.0));
    }
}
