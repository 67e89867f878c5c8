//! Normal distribution helpers built on `erf`/`erfc`.

use std::f64::consts::SQRT_2;

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `erf(x) - erf(y)` without cancellation when both arguments sit in the
/// same tail.
pub fn erf_diff(x: f64, y: f64) -> f64 {
    if x >= 0.0 && y >= 0.0 {
        libm::erfc(y) - libm::erfc(x)
    } else if x <= 0.0 && y <= 0.0 {
        libm::erfc(-x) - libm::erfc(-y)
    } else {
        libm::erf(x) - libm::erf(y)
    }
}
