use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GsaError, Result};

/// Squared normalized distance below which two inputs count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Axis-aligned box `[lower_k, upper_k]` carrying independent uniform inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(GsaError::invalid(format!(
                "bounds need matching non-empty vectors, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(GsaError::invalid(format!("bounds[{k}]: need lower < upper, got [{a}, {b}]")));
            }
        }
        Ok(Bounds { lower, upper })
    }

    /// The same interval `[lower, upper]` in every one of `dim` dimensions.
    pub fn cube(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Bounds::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, v)| (v - self.lower[k]) / self.width(k))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(k, v)| self.lower[k] + v * self.width(k))
            .collect()
    }

    pub fn to_unit_coord(&self, k: usize, v: f64) -> f64 {
        (v - self.lower[k]) / self.width(k)
    }

    pub fn from_unit_coord(&self, k: usize, u: f64) -> f64 {
        self.lower[k] + u * self.width(k)
    }

    /// True when `x` lies in the box, allowing a relative slack of 1e-12.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(k, v)| {
                let slack = 1e-12 * self.width(k);
                *v >= self.lower[k] - slack && *v <= self.upper[k] + slack
            })
    }
}

/// Paired inputs and scalar outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    bounds: Bounds,
}

impl TrainingSet {
    /// Validates and builds a training set. Rejects out-of-bounds inputs,
    /// non-finite values and duplicate rows (see [`DUPLICATE_TOL`]); fewer
    /// than two samples is an error.
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>, bounds: Bounds) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(GsaError::invalid(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        if inputs.len() < 2 {
            return Err(GsaError::invalid("a training set needs at least two samples"));
        }
        let mut set = TrainingSet {
            inputs: Vec::with_capacity(inputs.len()),
            outputs: Vec::with_capacity(outputs.len()),
            bounds,
        };
        for (x, y) in inputs.into_iter().zip(outputs) {
            set.push(x, y)?;
        }
        Ok(set)
    }

    /// Builds a training set after dropping later duplicates of earlier rows.
    pub fn deduplicated(inputs: Vec<Vec<f64>>, outputs: Vec<f64>, bounds: Bounds) -> Result<Self> {
        let mut keep_x = Vec::new();
        let mut keep_y = Vec::new();
        let probe = TrainingSet { inputs: Vec::new(), outputs: Vec::new(), bounds: bounds.clone() };
        let mut seen = probe;
        for (x, y) in inputs.into_iter().zip(outputs) {
            if !seen.is_duplicate(&x) {
                seen.inputs.push(x.clone());
                seen.outputs.push(y);
                keep_x.push(x);
                keep_y.push(y);
            }
        }
        TrainingSet::new(keep_x, keep_y, bounds)
    }

    /// Appends a sample, enforcing the same checks as [`TrainingSet::new`].
    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if x.len() != self.bounds.dim() {
            return Err(GsaError::invalid(format!(
                "input has dimension {}, expected {}",
                x.len(),
                self.bounds.dim()
            )));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(GsaError::invalid("non-finite training value"));
        }
        if !self.bounds.contains(&x) {
            return Err(GsaError::invalid(format!("input {x:?} outside bounds")));
        }
        if self.is_duplicate(&x) {
            return Err(GsaError::invalid(format!("duplicate input {x:?}")));
        }
        self.inputs.push(x);
        self.outputs.push(y);
        Ok(())
    }

    /// Whether `x` coincides with a stored input in normalized space.
    pub fn is_duplicate(&self, x: &[f64]) -> bool {
        let u = self.bounds.to_unit(x);
        self.inputs.iter().any(|row| {
            let v = self.bounds.to_unit(row);
            u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= DUPLICATE_TOL * DUPLICATE_TOL
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Inputs mapped to the unit hypercube, one row per sample.
    pub fn unit_inputs(&self) -> DMatrix<f64> {
        let n = self.len();
        let d = self.dim();
        let mut m = DMatrix::zeros(n, d);
        for (i, row) in self.inputs.iter().enumerate() {
            for k in 0..d {
                m[(i, k)] = self.bounds.to_unit_coord(k, row[k]);
            }
        }
        m
    }
}
