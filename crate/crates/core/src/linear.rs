//! Closed-form selection for the linear kernel.
//!
//! With `K_z(x, y) = Σ z_k x_k y_k` the statistic equals `aᵀz` where `a[k]` is
//! the squared difference of the column means, and the best d-sparse unit
//! direction puts weight proportional to `a` on its `d` largest entries.

use serde::{Deserialize, Serialize};

use crate::data::{SelectionVector, TwoSampleData};
use crate::error::{invalid, Result};

/// `a[k] = (mean_x[k] - mean_y[k])²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCoefficients(Vec<f64>);

impl LinearCoefficients {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("linear coefficients must be finite and nonnegative");
        }
        Ok(Self(a))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn linear_coefficients(data: &TwoSampleData) -> LinearCoefficients {
    let mx = data.x().row_mean();
    let my = data.y().row_mean();
    LinearCoefficients((0..data.dim()).map(|k| (mx[k] - my[k]).powi(2)).collect())
}

/// Result of [`linear_select`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSelection {
    pub selection: SelectionVector,
    pub objective: f64,
    /// Set when `a = 0`; the returned direction is then an arbitrary
    /// (first-d, equal weight) feasible point.
    pub no_signal: bool,
}

/// Indices of the `d` largest values, ties broken toward the lower index.
pub(crate) fn top_d_indices(values: &[f64], d: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    idx.truncate(d);
    idx.sort_unstable();
    idx
}

pub fn linear_select(a: &LinearCoefficients, d: usize) -> Result<LinearSelection> {
    let a = a.as_slice();
    let dim = a.len();
    if d == 0 || d > dim {
        return invalid(format!("need 1 <= d <= D, got d = {d}, D = {dim}"));
    }
    let top = top_d_indices(a, d);
    let norm = top.iter().map(|&k| a[k] * a[k]).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(LinearSelection {
            selection: SelectionVector::leading_uniform(dim, d)?,
            objective: 0.0,
            no_signal: true,
        });
    }
    let weights: Vec<f64> = top.iter().map(|&k| a[k]).collect();
    let selection = SelectionVector::from_support(dim, &top, &weights, d)?;
    // aᵀz* = Σ a_k² / ‖a_S‖ = ‖a_S‖
    Ok(LinearSelection {
        selection,
        objective: norm,
        no_signal: false,
    })
}
