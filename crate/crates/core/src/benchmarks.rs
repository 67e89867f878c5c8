//! Analytic test functions with known first-order Sobol indices, and the
//! error of a variance ratio under biased numerator and denominator.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{GsaError, Result};
use crate::gp::Bounds;

/// Registry names accepted by [`by_name`].
pub const NAMES: [&str; 5] = ["sqexp2", "sqexp6", "ishigami", "gfunction", "gaussian15"];

/// Coefficients of the 15-dimensional Gaussian product function.
pub const GAUSSIAN15_A: [f64; 15] = [
    1.45, 3.3, 15.0, 50.0, 55.0, 58.0, 59.0, 100.0, 102.0, 112.5, 150.0, 160.0, 180.0, 190.0, 200.0,
];

const ISHIGAMI_A: f64 = 7.0;
const ISHIGAMI_B: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    SquareExponential,
    Ishigami,
    GFunction(Vec<f64>),
    Gaussian(Vec<f64>),
}

/// A test function on a box of independent uniform inputs, together with
/// its exact variance decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    name: String,
    kind: Kind,
    bounds: Bounds,
    main_vars: Vec<f64>,
    total_var: f64,
}

impl Benchmark {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::SquareExponential => x[0] * (-x[0] * x[0] - x[1] * x[1]).exp(),
            Kind::Ishigami => {
                x[0].sin() + ISHIGAMI_A * x[1].sin().powi(2) + ISHIGAMI_B * x[2].powi(4) * x[0].sin()
            }
            Kind::GFunction(a) => x
                .iter()
                .zip(a)
                .map(|(v, ak)| ((4.0 * v - 2.0).abs() + ak) / (ak + 1.0))
                .product(),
            Kind::Gaussian(a) => x.iter().zip(a).map(|(v, ak)| (-v * v / ak).exp()).product(),
        }
    }

    /// Exact first-order indices.
    pub fn analytic_sobol(&self) -> Vec<f64> {
        self.main_vars.iter().map(|v| v / self.total_var).collect()
    }

    pub fn analytic_main_vars(&self) -> &[f64] {
        &self.main_vars
    }

    pub fn analytic_total_var(&self) -> f64 {
        self.total_var
    }
}

/// `y = x1 exp(-x1^2 - x2^2)` on `[-2, b]^2` for `b` in {2, 6}.
pub fn square_exponential(b_upper: f64) -> Result<Benchmark> {
    if b_upper != 2.0 && b_upper != 6.0 {
        return Err(GsaError::invalid(format!(
            "square exponential is defined for upper bound 2 or 6, got {b_upper}"
        )));
    }
    let (a, b) = (-2.0, b_upper);
    let len = b - a;
    // Averages over U(a, b).
    let gauss = |c: f64| 0.5 * (PI / c).sqrt() * crate::special::erf_diff(c.sqrt() * b, c.sqrt() * a) / len;
    let g1 = gauss(1.0);
    let g2 = gauss(2.0);
    let h1 = 0.5 * ((-a * a).exp() - (-b * b).exp()) / len;
    // E[x^2 exp(-2 x^2)] by parts.
    let q = 0.25 * (a * (-2.0 * a * a).exp() - b * (-2.0 * b * b).exp()) / len + 0.25 * g2;
    let total_var = q * g2 - h1 * h1 * g1 * g1;
    let main_vars = vec![g1 * g1 * (q - h1 * h1), h1 * h1 * (g2 - g1 * g1)];
    Ok(Benchmark {
        name: if b_upper == 2.0 { "sqexp2" } else { "sqexp6" }.into(),
        kind: Kind::SquareExponential,
        bounds: Bounds::cube(2, a, b)?,
        main_vars,
        total_var,
    })
}

/// `sin x1 + 7 sin^2 x2 + 0.1 x3^4 sin x1` on `[-pi, pi]^3`.
pub fn ishigami() -> Benchmark {
    let (a, b) = (ISHIGAMI_A, ISHIGAMI_B);
    let pi4 = PI.powi(4);
    let v1 = 0.5 * (1.0 + b * pi4 / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let total_var = a * a / 8.0 + b * pi4 / 5.0 + b * b * pi4 * pi4 / 18.0 + 0.5;
    Benchmark {
        name: "ishigami".into(),
        kind: Kind::Ishigami,
        bounds: Bounds::cube(3, -PI, PI).expect("valid bounds"),
        main_vars: vec![v1, v2, 0.0],
        total_var,
    }
}

/// `prod_k (|4 x_k - 2| + a_k) / (a_k + 1)` with `a_k = k` on `[0, 1]^d`.
pub fn g_function(d: usize) -> Result<Benchmark> {
    if d == 0 {
        return Err(GsaError::invalid("g-function needs at least one input"));
    }
    let a: Vec<f64> = (1..=d).map(|k| k as f64).collect();
    let main_vars: Vec<f64> = a.iter().map(|ak| 1.0 / (3.0 * (1.0 + ak) * (1.0 + ak))).collect();
    let total_var = main_vars.iter().map(|v| 1.0 + v).product::<f64>() - 1.0;
    Ok(Benchmark {
        name: "gfunction".into(),
        kind: Kind::GFunction(a),
        bounds: Bounds::cube(d, 0.0, 1.0)?,
        main_vars,
        total_var,
    })
}

/// `prod_i exp(-x_i^2 / a_i)` on `[-3, 3]^15` with [`GAUSSIAN15_A`].
pub fn gaussian15() -> Benchmark {
    let a = GAUSSIAN15_A.to_vec();
    // First and second moments of each factor under U(-3, 3).
    let m1: Vec<f64> = a.iter().map(|ak| (PI * ak).sqrt() * libm::erf(3.0 / ak.sqrt()) / 6.0).collect();
    let m2: Vec<f64> = a
        .iter()
        .map(|ak| (PI * ak / 2.0).sqrt() * libm::erf(3.0 * 2f64.sqrt() / ak.sqrt()) / 6.0)
        .collect();
    let p1: f64 = m1.iter().map(|v| v * v).product();
    let p2: f64 = m2.iter().product();
    let main_vars = (0..a.len())
        .map(|i| {
            let others: f64 = (0..a.len()).filter(|&j| j != i).map(|j| m1[j] * m1[j]).product();
            others * (m2[i] - m1[i] * m1[i])
        })
        .collect();
    Benchmark {
        name: "gaussian15".into(),
        kind: Kind::Gaussian(a),
        bounds: Bounds::cube(15, -3.0, 3.0).expect("valid bounds"),
        main_vars,
        total_var: p2 - p1,
    }
}

/// Looks a benchmark up by its registry name (see [`NAMES`]).
pub fn by_name(name: &str) -> Result<Benchmark> {
    match name {
        "sqexp2" => square_exponential(2.0),
        "sqexp6" => square_exponential(6.0),
        "ishigami" => Ok(ishigami()),
        "gfunction" => g_function(5),
        "gaussian15" => Ok(gaussian15()),
        _ => Err(GsaError::UnknownName(format!(
            "benchmark {name:?}; expected one of {}",
            NAMES.join(", ")
        ))),
    }
}

/// Direction of the bias in the numerator `A` and denominator `Y` of a
/// ratio `S = A / Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioCase {
    /// Both underestimated.
    BothUnder,
    /// Both overestimated.
    BothOver,
    /// Numerator over, denominator under.
    NumeratorOver,
    /// Numerator under, denominator over.
    NumeratorUnder,
}

impl RatioCase {
    pub const ALL: [RatioCase; 4] =
        [RatioCase::BothUnder, RatioCase::BothOver, RatioCase::NumeratorOver, RatioCase::NumeratorUnder];

    /// Case by its number 1 to 4 in the order of [`RatioCase::ALL`].
    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1..=4 => Ok(Self::ALL[k as usize - 1]),
            _ => Err(GsaError::invalid(format!("ratio case must be 1 to 4, got {k}"))),
        }
    }

    pub fn number(self) -> u8 {
        Self::ALL.iter().position(|c| *c == self).unwrap() as u8 + 1
    }

    /// Signs applied to `(dA, dY)` in the estimates `A ± dA`, `Y ± dY`.
    fn signs(self) -> (f64, f64) {
        match self {
            RatioCase::BothUnder => (-1.0, -1.0),
            RatioCase::BothOver => (1.0, 1.0),
            RatioCase::NumeratorOver => (1.0, -1.0),
            RatioCase::NumeratorUnder => (-1.0, 1.0),
        }
    }
}

/// Absolute error of the ratio `S = A / Y` when `A` and `Y` are misestimated
/// by `da` and `dy` in the directions of `case`.
///
/// ```
/// use gsax::benchmarks::{ratio_error, RatioCase};
///
/// let e = ratio_error(0.8, 1.0, 0.2, 0.1, RatioCase::NumeratorUnder).unwrap();
/// assert!((e - 0.28 / 1.1).abs() < 1e-12);
/// ```
pub fn ratio_error(s: f64, y: f64, da: f64, dy: f64, case: RatioCase) -> Result<f64> {
    if !(da >= 0.0 && dy >= 0.0) {
        return Err(GsaError::invalid("error magnitudes must be nonnegative"));
    }
    let (sa, sy) = case.signs();
    let denom = y + sy * dy;
    if !(denom > 0.0) {
        return Err(GsaError::Domain(format!(
            "estimated denominator {y} - {dy} is not positive"
        )));
    }
    Ok((sy * s * dy - sa * da).abs() / denom)
}

/// Table of [`ratio_error`] with rows over `da_grid` and columns over
/// `dy_grid`.
pub fn ratio_error_surface(s: f64, y: f64, da_grid: &[f64], dy_grid: &[f64], case: RatioCase) -> Result<Vec<Vec<f64>>> {
    da_grid
        .iter()
        .map(|da| dy_grid.iter().map(|dy| ratio_error(s, y, *da, *dy, case)).collect())
        .collect()
}
