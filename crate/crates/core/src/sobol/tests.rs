use super::*;
use crate::gp::{Basis, Bounds, FitConfig, NuggetMode, TrainingSet};
use crate::marginal::main_effect_cov;

fn uniform(n: usize, bounds: &Bounds, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| bounds.from_unit(&(0..bounds.dim()).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
        .collect()
}

fn fit(n: usize, bounds: Bounds, f: impl Fn(&[f64]) -> f64, seed: u64) -> GpModel {
    let xs = uniform(n, &bounds, seed);
    let ys = xs.iter().map(|x| f(x)).collect();
    let data = TrainingSet::new(xs, ys, bounds).unwrap();
    GpModel::fit(&data, Basis::Linear, NuggetMode::None, &FitConfig::default()).unwrap()
}

#[test]
fn sample_variance_is_unbiased_form() {
    assert_eq!(sample_variance(&[1.0, 3.0]), 2.0);
    assert_eq!(sample_variance(&[0.0, 4.0, 8.0]), 16.0);
}

#[test]
fn constant_predictor_is_degenerate() {
    let b = Bounds::cube(2, 0.0, 1.0).unwrap();
    let gp = fit(8, b.clone(), |_| 2.0, 1);
    let c = uniform(50, &b, 2);
    assert!(matches!(total_variance(&gp, &c), Err(GsaError::DegenerateVariance(_))));
    assert!(matches!(estimate_mean_predictor(&gp, &c), Err(GsaError::DegenerateVariance(_))));
    assert!(total_variance(&gp, &c[..1]).is_err());
}

#[test]
fn identity_predictor_has_uniform_variance() {
    let b = Bounds::cube(1, 0.0, 1.0).unwrap();
    let gp = fit(6, b.clone(), |x| x[0], 3);
    let v = total_variance(&gp, &uniform(100_000, &b, 4)).unwrap();
    assert!((v - 1.0 / 12.0).abs() <= 0.02 / 12.0, "{v}");
}

#[test]
fn single_input_takes_all_variance() {
    let b = Bounds::new(vec![-1.0], vec![3.0]).unwrap();
    let gp = fit(9, b.clone(), |x| (1.3 * x[0]).sin() + 0.2 * x[0] * x[0], 5);
    let s = estimate_mean_predictor(&gp, &uniform(2000, &b, 6)).unwrap();
    assert!((s.indices[0] - 1.0).abs() <= 1e-6, "{}", s.indices[0]);
}

#[test]
fn inert_input_has_zero_index_and_ratio_is_exact() {
    let b = Bounds::cube(2, 0.0, 1.0).unwrap();
    let gp = fit(10, b.clone(), |x| x[0], 7);
    let s = estimate_mean_predictor(&gp, &uniform(5000, &b, 8)).unwrap();
    assert!((s.indices[0] - 1.0).abs() <= 0.02 && s.indices[1].abs() <= 0.02, "{:?}", s.indices);
    for i in 0..2 {
        assert_eq!(s.indices[i], s.main_effect_vars[i] / s.total_var);
        assert!(s.indices[i] >= 0.0);
    }
    assert_eq!(s.method, Method::MeanPredictor);
    assert!(s.index_std.is_none());
}

fn two_d() -> (GpModel, Bounds) {
    let b = Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
    let gp = fit(20, b.clone(), |x| x[0] * (-x[0] * x[0] - x[1] * x[1]).exp(), 9);
    (gp, b)
}

#[test]
fn zero_covariance_reproduces_mean_predictor() {
    let (gp, _) = two_d();
    let n_g = 32;
    // Candidates on the grid diagonal: every coordinate runs over the grid.
    let grid = uniform_grid(&gp, 0, n_g).unwrap();
    let candidates: Vec<Vec<f64>> = grid.iter().map(|v| vec![*v, *v]).collect();
    let mp = estimate_mean_predictor(&gp, &candidates).unwrap();
    let zero = DMatrix::zeros(n_g, n_g);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..2 {
        let me = main_effect(&gp, i, &grid).unwrap();
        // Two realizations average without rounding.
        let (avg, spread) = simulate_main_effect_variances(&me.mean, &zero, 2, &mut rng);
        assert_eq!(avg, mp.main_effect_vars[i]);
        assert_eq!(spread, 0.0);
        let (avg, _) = simulate_main_effect_variances(&me.mean, &zero, 10, &mut rng);
        assert!((avg - mp.main_effect_vars[i]).abs() <= 1e-15 * avg);
    }
}

#[test]
fn full_gp_estimate_is_deterministic_and_consistent() {
    let (gp, b) = two_d();
    let c = uniform(3000, &b, 10);
    let a = estimate_full_gp(&gp, &c, 48, 200, 5).unwrap();
    let again = estimate_full_gp(&gp, &c, 48, 200, 5).unwrap();
    assert_eq!(a, again);
    assert_eq!(a.method, Method::FullGp);
    let mp = estimate_mean_predictor(&gp, &c).unwrap();
    assert_eq!(a.total_var, mp.total_var);
    let std = a.index_std.as_ref().unwrap();
    for i in 0..2 {
        assert_eq!(a.indices[i], a.main_effect_vars[i] / a.total_var);
        // The simulated variance adds the posterior spread to the mean
        // predictor's; with a decent fit both stay close.
        assert!((a.indices[i] - mp.indices[i]).abs() <= 3.0 * std[i] + 0.05, "{i}: {a:?} vs {mp:?}");
    }
    assert!(estimate_full_gp(&gp, &c, 48, 1, 5).is_err());
}

#[test]
fn cholesky_factor_reconstructs_covariance() {
    let (gp, _) = two_d();
    let grid = uniform_grid(&gp, 1, 64).unwrap();
    let cov = main_effect_cov(&gp, 1, &grid).unwrap();
    let l = cov.factor();
    assert!((l * l.transpose() - cov.matrix()).norm() <= 1e-8);
}

#[test]
fn realized_variance_average_stabilizes() {
    let (gp, _) = two_d();
    let grid = uniform_grid(&gp, 0, 12).unwrap();
    let me = main_effect(&gp, 0, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (a, _) = simulate_main_effect_variances(&me.mean, me.cov.factor(), 5000, &mut rng);
    let (b, _) = simulate_main_effect_variances(&me.mean, me.cov.factor(), 10_000, &mut rng);
    assert!((a - b).abs() / b < 0.02, "{a} vs {b}");
}
