use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Result of checking `exact ≤ relax ≤ ‖t‖₂ + min{(D/d)·exact, d·exact − min_k |t_k|}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    pub pass: bool,
    /// Right-hand bound minus the relaxation value.
    pub slack: f64,
    pub bound: f64,
}

/// Both inequalities are checked with tolerance `rel_tol·(1 + |bound|)`.
pub fn approximation_gap(relax_value: f64, exact_value: f64, t: &DVector<f64>, dim: usize, d: usize, rel_tol: f64) -> GapCheck {
    let ratio = dim as f64 / d as f64;
    let tmin = t.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let bound = t.norm() + (ratio * exact_value).min(d as f64 * exact_value - tmin);
    let tol = rel_tol * (1.0 + bound.abs());
    let pass = exact_value <= relax_value + tol && relax_value <= bound + tol;
    GapCheck {
        pass,
        slack: bound - relax_value,
        bound,
    }
}
