//! Sparse inhomogeneous quadratic maximization for the quadratic kernel:
//! `max { zᵀAz + tᵀz : ‖z‖₂ = 1, ‖z‖₀ ≤ d }`.
//!
//! Every solver reduces to choosing a support `S` and evaluating the set
//! function `Λ(S)` with the sphere oracle in [`crate::trs`].

mod bnb;
mod gap;
mod instance;
mod local;
mod relax;
mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{SelectionVector, TwoSampleData};
use crate::error::{invalid, Error, Result};
use crate::trs::{lambda_set, max_asymmetry, sorted_eigen};

pub use bnb::{exact_select_bnb, exact_select_bnb_with, BnbConfig};
pub use gap::{approximation_gap, GapCheck};
pub use instance::{read_instance, write_instance};
pub use local::{greedy_select, local_search};
pub use relax::{prescreen_then_relax, relax_select, RelaxConfig, RelaxState};
pub use simplex::project_capped_simplex;

/// Coefficients of the quadratic program, with `A` shifted to be PSD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadProblem {
    a: DMatrix<f64>,
    t: DVector<f64>,
    shift: f64,
    offset: f64,
}

impl QuadProblem {
    /// Takes the unshifted `A` (symmetric) and `t`. When `λ_min(A) < 0` the
    /// stored matrix is `A - λ_min I` and `shift = λ_min`; on the unit sphere
    /// the two objectives differ by exactly `shift`.
    pub fn new(a: DMatrix<f64>, t: DVector<f64>) -> Result<Self> {
        let dim = a.nrows();
        if dim == 0 || a.ncols() != dim {
            return invalid("quadratic matrix must be square and non-empty");
        }
        if t.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "linear term of quadratic problem".into(),
                expected: dim,
                found: t.len(),
            });
        }
        if a.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return invalid("quadratic problem data must be finite");
        }
        let asym = max_asymmetry(&a);
        if asym > 1e-10 * a.amax().max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        let mut a = (&a + a.transpose()) * 0.5;
        let (vals, _) = sorted_eigen(a.clone(), "quadratic problem shift")?;
        let lmin = *vals.last().unwrap_or(&0.0);
        let shift = if lmin < 0.0 { lmin } else { 0.0 };
        if shift < 0.0 {
            for i in 0..dim {
                a[(i, i)] -= shift;
            }
        }
        Ok(Self {
            a,
            t,
            shift,
            offset: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Shifted (PSD) matrix.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn t(&self) -> &DVector<f64> {
        &self.t
    }

    /// `λ_min` of the original matrix when negative, else 0.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Constant part of the statistic not carried by `A` and `t`. For the
    /// quadratic kernel the `c²` terms cancel across the three sums, so this
    /// is 0 for assembled problems.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// The matrix as given to [`QuadProblem::new`].
    pub fn unshifted_a(&self) -> DMatrix<f64> {
        let mut a = self.a.clone();
        for i in 0..self.dim() {
            a[(i, i)] += self.shift;
        }
        a
    }

    /// `zᵀAz + tᵀz` with the original matrix.
    pub fn objective(&self, z: &[f64]) -> f64 {
        let zv = DVector::from_column_slice(z);
        zv.dot(&(self.unshifted_a() * &zv)) + self.t.dot(&zv)
    }

    /// Restriction to the listed coordinates (unshifted data re-shifted).
    pub fn restrict(&self, cols: &[usize]) -> Result<Self> {
        let a = self.unshifted_a().select_rows(cols).select_columns(cols);
        let t = DVector::from_iterator(cols.len(), cols.iter().map(|&k| self.t[k]));
        Self::new(a, t)
    }
}

/// Builds `A` and `t` for the quadratic kernel with offset `c`.
///
/// The double sums over sample pairs collapse to moments:
/// `A = (S_x - S_y)∘(S_x - S_y)` with `S = XᵀX / n`, and
/// `t = 2c (mean_x - mean_y)²` entrywise.
pub fn assemble_quadratic(data: &TwoSampleData, c: f64) -> Result<QuadProblem> {
    if !(c > 0.0 && c.is_finite()) {
        return invalid("quadratic kernel offset c must be positive");
    }
    let (n, m) = (data.n() as f64, data.m() as f64);
    let sx = data.x().transpose() * data.x() / n;
    let sy = data.y().transpose() * data.y() / m;
    let diff = sx - sy;
    let a = diff.component_mul(&diff);
    let mx = data.x().row_mean();
    let my = data.y().row_mean();
    let t = DVector::from_iterator(data.dim(), (0..data.dim()).map(|k| 2.0 * c * (mx[k] - my[k]).powi(2)));
    QuadProblem::new(a, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadMethod {
    Greedy,
    Local,
    Exact,
    Relax,
}

/// Outcome of a quadratic selection solver. `value` refers to the unshifted
/// objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadSolveReport {
    pub support: Vec<usize>,
    pub z: SelectionVector,
    pub value: f64,
    pub method: QuadMethod,
    pub upper_bound: Option<f64>,
    pub node_count: Option<u64>,
    /// For the relaxation: whether the upper bound met the configured
    /// feasibility and gap tolerances.
    pub bound_certified: Option<bool>,
}

pub(crate) fn validate_budget(d: usize, dim: usize) -> Result<()> {
    if d == 0 || d > dim {
        return invalid(format!("need 1 <= d <= D, got d = {d}, D = {dim}"));
    }
    Ok(())
}

/// Report for a fixed support, evaluated with the certified sphere oracle.
pub(crate) fn report_for_support(
    qp: &QuadProblem,
    support: &[usize],
    d: usize,
    method: QuadMethod,
    tol: f64,
) -> Result<QuadSolveReport> {
    let mut support = support.to_vec();
    support.sort_unstable();
    let sol = lambda_set(&support, qp, tol)?;
    let z: Vec<f64> = sol.z.iter().copied().collect();
    let z = SelectionVector::new(z, d)?;
    Ok(QuadSolveReport {
        support,
        z,
        value: sol.value,
        method,
        upper_bound: None,
        node_count: None,
        bound_certified: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmd::{mmd_sq, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Direct double sums over sample pairs.
    fn brute_assemble(data: &TwoSampleData, c: f64) -> (DMatrix<f64>, DVector<f64>) {
        let dim = data.dim();
        let mut a = DMatrix::zeros(dim, dim);
        let mut t = DVector::zeros(dim);
        let mut acc = |u: Vec<f64>, v: Vec<f64>, w: f64| {
            let p: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a * b).collect();
            for k in 0..dim {
                t[k] += w * 2.0 * c * p[k];
                for l in 0..dim {
                    a[(k, l)] += w * p[k] * p[l];
                }
            }
        };
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect() };
        let (xs, ys) = (rows(data.x()), rows(data.y()));
        let (n, m) = (xs.len() as f64, ys.len() as f64);
        for u in &xs {
            for v in &xs {
                acc(u.clone(), v.clone(), 1.0 / (n * n));
            }
        }
        for u in &ys {
            for v in &ys {
                acc(u.clone(), v.clone(), 1.0 / (m * m));
            }
        }
        for u in &xs {
            for v in &ys {
                acc(u.clone(), v.clone(), -2.0 / (n * m));
            }
        }
        (a, t)
    }

    #[test]
    fn assembly_example() {
        let d = TwoSampleData::from_rows(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]]).unwrap();
        let qp = assemble_quadratic(&d, 1.0).unwrap();
        assert_eq!(qp.a(), &DMatrix::identity(2, 2));
        assert_eq!(qp.t().as_slice(), &[2.0, 2.0]);
        assert_eq!(qp.shift(), 0.0);
        let s = 0.5f64.sqrt();
        assert!((qp.objective(&[s, s]) - (1.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);

        let same = TwoSampleData::from_rows(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap();
        let qp = assemble_quadratic(&same, 0.5).unwrap();
        assert_eq!(qp.a().amax(), 0.0);
        assert_eq!(qp.t().amax(), 0.0);
    }

    #[test]
    fn assembly_matches_double_sums_and_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let dim = rng.random_range(1..5);
            let n = rng.random_range(1..6);
            let m = rng.random_range(1..6);
            let gen = |rng: &mut ChaCha8Rng, k: usize| -> Vec<Vec<f64>> {
                (0..k).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
            };
            let xs = gen(&mut rng, n);
            let ys = gen(&mut rng, m);
            let data = TwoSampleData::from_rows(&xs, &ys).unwrap();
            let c = rng.random_range(0.1..2.0);
            let qp = assemble_quadratic(&data, c).unwrap();
            let (a, t) = brute_assemble(&data, c);
            assert!((qp.unshifted_a() - &a).amax() < 1e-10);
            assert!((qp.t() - &t).amax() < 1e-10);
            assert!(sorted_eigen(qp.a().clone(), "test").unwrap().0.last().unwrap() >= &-1e-8);

            // statistic = objective + constant, constant independent of z
            let spec = KernelSpec::Quadratic { c };
            let mut consts = Vec::new();
            for _ in 0..2 {
                let mut z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let nrm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                z.iter_mut().for_each(|v| *v /= nrm);
                let sel = SelectionVector::new(z.clone(), dim).unwrap();
                consts.push(mmd_sq(&spec, &sel, &data).unwrap() - qp.objective(&z));
            }
            assert!((consts[0] - consts[1]).abs() < 1e-9);
            assert!((consts[0] - qp.offset()).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_recorded_for_indefinite_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let qp = QuadProblem::new(a, DVector::from_column_slice(&[1.0, 0.0])).unwrap();
        assert!((qp.shift() + 2.0).abs() < 1e-12);
        assert!((qp.a()[(0, 0)] - 2.0).abs() < 1e-12);
        let z = [0.6, 0.8];
        let shifted = {
            let zv = DVector::from_column_slice(&z);
            zv.dot(&(qp.a() * &zv)) + qp.t().dot(&zv)
        };
        assert!((qp.objective(&z) - (shifted + qp.shift())).abs() < 1e-12);
    }
}
