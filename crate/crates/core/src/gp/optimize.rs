//! Box-constrained quasi-Newton ascent used for the likelihood search.
//!
//! Projected BFGS with an Armijo backtracking line search. Components pinned
//! at a bound with the gradient pointing outward are frozen for the step.
//! Objective failures (`None`) are treated like a failed Armijo test, so the
//! search simply backs away from regions where the correlation matrix cannot
//! be factorized.

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
}

pub(crate) struct Settings {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub value_tol: f64,
    /// Largest allowed move of a single coordinate per iteration.
    pub max_step: f64,
    /// Accepted moves below this (largest coordinate) count as stalled; a
    /// maximum on the edge of the defined region is reached this way.
    pub step_tol: f64,
    /// Relative gain below which a step that had to back away from an
    /// undefined point ends the search: the maximum lies on that edge.
    pub edge_tol: f64,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for k in 0..x.len() {
        x[k] = x[k].clamp(lo[k], hi[k]);
    }
}

fn free_mask(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<bool> {
    (0..x.len())
        .map(|k| {
            let at_lo = x[k] <= lo[k] && g[k] < 0.0;
            let at_hi = x[k] >= hi[k] && g[k] > 0.0;
            !(at_lo || at_hi)
        })
        .collect()
}

/// Maximizes `f` over the box `[lo, hi]` starting from `x0`. `f` returns
/// the value and whatever `grad` needs to finish the gradient, or `None`
/// where it is undefined. Gradients are only formed at accepted points.
pub(crate) fn maximize<F, G, T>(mut f: F, mut grad: G, x0: &[f64], lo: &[f64], hi: &[f64], s: &Settings) -> Option<Outcome>
where
    F: FnMut(&[f64]) -> Option<(f64, T)>,
    G: FnMut(&[f64], T) -> Vec<f64>,
{
    let m = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, state) = f(&x)?;
    let mut g = grad(&x, state);
    if !fx.is_finite() {
        return None;
    }
    // Inverse Hessian approximation of -f.
    let mut h = identity(m);
    let mut converged = false;
    let mut small_steps = 0;
    // After backing off an undefined region, start the next line search
    // near the step that worked instead of bisecting from scratch.
    let mut step_cap = f64::INFINITY;

    for _ in 0..s.max_iters {
        let mask = free_mask(&x, &g, lo, hi);
        let pg: f64 = (0..m).filter(|&k| mask[k]).map(|k| g[k] * g[k]).sum::<f64>().sqrt();
        if pg < s.grad_tol {
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut hit_edge = false;
        for attempt in 0..2 {
            if attempt == 1 {
                h = identity(m);
            }
            let mut dir = vec![0.0; m];
            for i in 0..m {
                if !mask[i] {
                    continue;
                }
                dir[i] = (0..m).filter(|&j| mask[j]).map(|j| h[i][j] * g[j]).sum();
            }
            // Guard against a non-ascent direction from a poor H.
            let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope > 0.0) {
                continue;
            }
            let big = dir.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let mut t = if big > s.max_step { s.max_step / big } else { 1.0 };
            if attempt == 0 {
                t = t.min(step_cap / big);
            }
            for _ in 0..30 {
                let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                project(&mut trial, lo, hi);
                let gain: f64 = trial.iter().zip(&x).zip(&g).map(|((a, b), c)| (a - b) * c).sum();
                if let Some((ft, state)) = f(&trial) {
                    if ft.is_finite() && ft >= fx + 1e-4 * gain {
                        let gt = grad(&trial, state);
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                } else {
                    hit_edge = true;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fnew, gn)) = accepted else {
            // No ascent possible along any direction tried: stationary to
            // working precision.
            converged = true;
            break;
        };
        let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Curvature pair for the minimization of -f.
        let yv: Vec<f64> = g.iter().zip(&gn).map(|(a, b)| a - b).collect();
        let sy: f64 = step.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            bfgs_update(&mut h, &step, &yv, sy);
        }
        let improvement = fnew - fx;
        let moved = step.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        step_cap = if hit_edge { 4.0 * moved } else { f64::INFINITY };
        x = xn;
        fx = fnew;
        g = gn;
        if hit_edge && improvement.abs() <= s.edge_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        if improvement.abs() <= s.value_tol * (1.0 + fx.abs()) || moved < s.step_tol {
            small_steps += 1;
            if small_steps >= 2 {
                converged = true;
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    Some(Outcome { x, value: fx, converged })
}

fn identity(m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let m = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..m).map(|i| (0..m).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..m {
        for j in 0..m {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
