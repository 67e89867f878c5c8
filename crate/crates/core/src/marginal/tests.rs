use super::*;
use crate::gp::{Basis, Bounds, FitConfig, NuggetMode, TrainingSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tanh-sinh quadrature on `[a, b]`, split at the given interior points.
fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64]) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|p| *p > a && *p < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.windows(2)
        .map(|w| quadrature::integrate(&f, w[0], w[1], 1e-15).integral)
        .sum()
}

fn peak_breaks(t: f64, theta: f64) -> Vec<f64> {
    let w = 1.0 / theta.sqrt();
    vec![t - 4.0 * w, t - w, t, t + w, t + 4.0 * w]
}

fn k1_oracle(theta: f64, t: f64, a: f64, b: f64) -> f64 {
    quad(|x| (-theta * (x - t) * (x - t)).exp(), a, b, &peak_breaks(t, theta)) / (b - a)
}

fn k2_oracle(theta: f64, a: f64, b: f64) -> f64 {
    let outer = |x1: f64| quad(|x2| (-theta * (x1 - x2) * (x1 - x2)).exp(), a, b, &peak_breaks(x1, theta));
    quad(outer, a, b, &[]) / ((b - a) * (b - a))
}

const THETAS: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
const INTERVALS: [(f64, f64); 3] = [(0.0, 1.0), (-2.0, 6.0), (-std::f64::consts::PI, std::f64::consts::PI)];

#[test]
fn kernel_1d_matches_quadrature() {
    for theta in THETAS {
        for (a, b) in INTERVALS {
            for frac in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let t = a + frac * (b - a);
                let v = kernel_integral_1d(theta, t, a, b).unwrap();
                let o = k1_oracle(theta, t, a, b);
                assert!((v - o).abs() <= 1e-10, "theta {theta} t {t} [{a},{b}]: {v} vs {o}");
            }
        }
    }
    let v = kernel_integral_1d(2.0, 0.3, 0.0, 1.0).unwrap();
    assert!((v - k1_oracle(2.0, 0.3, 0.0, 1.0)).abs() <= 1e-12);
}

#[test]
fn kernel_1d_limits() {
    assert!((kernel_integral_1d(1e-10, 0.5, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-6);
    // Midpoint: symmetric closed form.
    let (theta, a, b): (f64, f64, f64) = (3.0, -1.0, 2.0);
    let l = b - a;
    let phi = crate::special::normal_cdf((2.0 * theta).sqrt() * l / 2.0);
    let expect = (std::f64::consts::PI / theta).sqrt() * (2.0 * phi - 1.0) / l;
    assert!((kernel_integral_1d(theta, 0.5, a, b).unwrap() - expect).abs() < 1e-14);
    assert!(kernel_integral_1d(0.0, 0.5, 0.0, 1.0).is_err());
    assert!(kernel_integral_1d(1.0, 0.5, 1.0, 1.0).is_err());
}

#[test]
fn kernel_2d_matches_quadrature() {
    for theta in THETAS {
        for (a, b) in INTERVALS {
            let v = kernel_integral_2d(theta, a, b).unwrap();
            let o = k2_oracle(theta, a, b);
            assert!((v - o).abs() <= 1e-8, "theta {theta} [{a},{b}]: {v} vs {o}");
        }
    }
    let v = kernel_integral_2d(1.5, 0.0, 1.0).unwrap();
    assert!((v - k2_oracle(1.5, 0.0, 1.0)).abs() <= 1e-10);
}

#[test]
fn kernel_2d_limits() {
    assert!((kernel_integral_2d(1e-8, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-4);
    let a = kernel_integral_2d(0.7, 0.0, 1.0).unwrap();
    let b = kernel_integral_2d(0.7, 5.0, 6.0).unwrap();
    assert!((a - b).abs() <= 1e-12);
    // Both branches of the small-argument switch agree.
    let z2: f64 = 1.01e-8;
    let series = 1.0 - z2 / 6.0 + z2 * z2 / 30.0;
    assert!((k2(z2, 1.0) - series).abs() < 1e-15);
    assert!(kernel_integral_2d(-1.0, 0.0, 1.0).is_err());
}

proptest! {
    #[test]
    fn kernel_averages_lie_in_unit_interval(theta in 1e-4f64..1e3, frac in 0.0f64..1.0, a in -5.0f64..5.0, len in 0.1f64..10.0) {
        let b = a + len;
        let t = a + frac * len;
        let v = kernel_integral_1d(theta, t, a, b).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0 + 1e-15);
        let mirrored = kernel_integral_1d(theta, a + b - t, a, b).unwrap();
        prop_assert!((v - mirrored).abs() <= 1e-13);
        let w = kernel_integral_2d(theta, a, b).unwrap();
        prop_assert!(w > 0.0 && w <= 1.0 + 1e-15);
    }
}

fn fit(xs: Vec<Vec<f64>>, f: impl Fn(&[f64]) -> f64, bounds: Bounds, nugget: NuggetMode) -> GpModel {
    let ys = xs.iter().map(|x| f(x)).collect();
    let data = TrainingSet::new(xs, ys, bounds).unwrap();
    GpModel::fit(&data, Basis::Linear, nugget, &FitConfig::default()).unwrap()
}

fn random_points(n: usize, bounds: &Bounds, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| bounds.from_unit(&(0..bounds.dim()).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
        .collect()
}

fn two_d_model(nugget: NuggetMode) -> GpModel {
    let bounds = Bounds::new(vec![-1.0, 0.0], vec![2.0, 3.0]).unwrap();
    let xs = random_points(14, &bounds, 8);
    fit(xs, |x| (1.5 * x[0]).sin() * (0.5 + x[1]) + 0.2 * x[1] * x[1], bounds, nugget)
}

#[test]
fn single_input_reduces_to_full_process() {
    let bounds = Bounds::new(vec![-1.0], vec![2.0]).unwrap();
    let xs = random_points(8, &bounds, 3);
    let gp = fit(xs, |x| (2.0 * x[0]).sin() + x[0], bounds, NuggetMode::None);
    let grid = uniform_grid(&gp, 0, 20).unwrap();
    let me = main_effect(&gp, 0, &grid).unwrap();
    for (a, xa) in grid.iter().enumerate() {
        assert!((me.mean[a] - gp.predict_mean(&[*xa])).abs() <= 1e-8);
        for (b, xb) in grid.iter().enumerate() {
            let c = gp.covariance(&[*xa], &[*xb]).unwrap();
            assert!((me.cov.matrix()[(a, b)] - c).abs() <= 1e-8, "{a},{b}");
        }
    }
}

#[test]
fn constant_outputs_give_constant_main_effects() {
    let bounds = Bounds::cube(3, 0.0, 2.0).unwrap();
    let xs = random_points(12, &bounds, 5);
    let gp = fit(xs, |_| -4.25, bounds, NuggetMode::None);
    for i in 0..3 {
        let grid = uniform_grid(&gp, i, 9).unwrap();
        for m in main_effect_mean(&gp, i, &grid).unwrap() {
            assert!((m + 4.25).abs() <= 1e-8, "{m}");
        }
    }
}

/// Mean and variance of the main effect against direct quadrature of the
/// posterior mean and covariance over the averaged-out input.
#[test]
fn main_effect_matches_quadrature_of_the_posterior() {
    for nugget in [NuggetMode::None, NuggetMode::Fixed(0.05)] {
        let gp = two_d_model(nugget);
        for i in 0..2 {
            let o = 1 - i;
            let (lo, hi) = (gp.bounds().lower()[o], gp.bounds().upper()[o]);
            let w = hi - lo;
            let grid = uniform_grid(&gp, i, 7).unwrap();
            let means = main_effect_mean(&gp, i, &grid).unwrap();
            let vars = main_effect_variance(&gp, i, &grid).unwrap();
            for (k, xi) in grid.iter().enumerate() {
                let point = |z: f64| {
                    let mut x = [0.0; 2];
                    x[i] = *xi;
                    x[o] = z;
                    x
                };
                let m = quad(|z| gp.predict_mean(&point(z)), lo, hi, &[]) / w;
                assert!((means[k] - m).abs() <= 1e-8 * (1.0 + m.abs()), "mean i={i} k={k}: {} vs {m}", means[k]);
                let v = quad(
                    |z1| quad(|z2| gp.covariance(&point(z1), &point(z2)).unwrap(), lo, hi, &[]),
                    lo,
                    hi,
                    &[],
                ) / (w * w);
                let s2 = gp.process_variance();
                assert!((vars[k] - v.max(0.0)).abs() <= 1e-7 * s2, "var i={i} k={k}: {} vs {v}", vars[k]);
            }
        }
    }
}

#[test]
fn covariance_is_repaired_and_consistent_with_variance() {
    let gp = two_d_model(NuggetMode::None);
    let s2 = gp.process_variance();
    let grid = uniform_grid(&gp, 1, DEFAULT_GRID_SIZE).unwrap();
    let cov = main_effect_cov(&gp, 1, &grid).unwrap();
    let vars = main_effect_variance(&gp, 1, &grid).unwrap();
    assert!(cov.jitter() <= 1e-10 * s2);
    let c = cov.matrix();
    assert_eq!(c, &c.transpose());
    for k in 0..grid.len() {
        assert!(c[(k, k)] >= 0.0);
        assert!((c[(k, k)] - cov.jitter() - vars[k]).abs() <= 1e-10 * s2);
    }
    let l = cov.factor();
    assert!((l * l.transpose() - c).norm() <= 1e-8 * s2.max(1.0));
}

#[test]
fn interaction_effect_reductions() {
    let gp = two_d_model(NuggetMode::None);
    let grid = uniform_grid(&gp, 1, 11).unwrap();
    let me = main_effect(&gp, 1, &grid).unwrap();
    let pts: Vec<Vec<f64>> = grid.iter().map(|x| vec![*x]).collect();
    let ie = interaction_effect(&gp, &[1], &pts).unwrap();
    for k in 0..grid.len() {
        assert!((me.mean[k] - ie.mean[k]).abs() <= 1e-10);
    }
    assert!((me.cov.matrix() - ie.cov.matrix()).abs().max() <= 1e-10);

    // Nothing averaged out: the full posterior, with coordinates given in
    // the order of `dims`.
    let pts: Vec<Vec<f64>> = random_points(6, gp.bounds(), 17).into_iter().map(|x| vec![x[1], x[0]]).collect();
    let full = interaction_effect(&gp, &[1, 0], &pts).unwrap();
    for (a, pa) in pts.iter().enumerate() {
        let xa = [pa[1], pa[0]];
        assert!((full.mean[a] - gp.predict_mean(&xa)).abs() <= 1e-8);
        for (b, pb) in pts.iter().enumerate() {
            let xb = [pb[1], pb[0]];
            let c = gp.covariance(&xa, &xb).unwrap();
            assert!((full.cov.matrix()[(a, b)] - c).abs() <= 1e-8);
        }
    }
    assert!(interaction_effect(&gp, &[], &pts).is_err());
    assert!(interaction_effect(&gp, &[0, 0], &pts).is_err());
    assert!(interaction_effect(&gp, &[2], &pts).is_err());
}

#[test]
fn grid_outside_bounds_is_rejected() {
    let gp = two_d_model(NuggetMode::None);
    assert!(main_effect_mean(&gp, 0, &[2.5]).is_err());
    assert!(main_effect_mean(&gp, 2, &[0.5]).is_err());
    assert!(uniform_grid(&gp, 0, 1).is_err());
    let g = uniform_grid(&gp, 0, 3).unwrap();
    assert_eq!(g, vec![-1.0, 0.5, 2.0]);
}
