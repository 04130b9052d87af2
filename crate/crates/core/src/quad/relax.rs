//! Convex relaxation of the sparse quadratic program over the bordered
//! matrix `Z̄ = [1 vᵀ; v V] ⪰ 0` with `Tr V = 1`, `q` in the capped simplex
//! and the row constraints `|V_ij| ≤ M_ij q_i`, `Σ_j |V_ij| ≤ √d q_i`
//! (`M_ii = 1`, `M_ij = 1/2` otherwise).
//!
//! The relaxation is solved by a primal-dual (Chambolle-Pock) iteration.
//! The primal blocks are `Z̄` on the trace-2 spectrahedron (entropic mirror
//! steps), `q` on the capped simplex (exact projection) and a slack matrix
//! `S ≥ |V|` in the unit box. The row constraints and `Z̄₀₀ = 1` carry
//! multipliers updated by projected ascent. Iterates restart from their
//! running averages on a doubling schedule.
//!
//! For any multipliers the Lagrangian maximum over the outer sets has a
//! closed form, so every checkpoint yields a valid upper bound. Averaged
//! primal iterates are repaired to exact feasibility and give the lower
//! bound. The bound is certified when the two meet within `opt_tol`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{greedy_select, project_capped_simplex, report_for_support, validate_budget, QuadMethod, QuadProblem, QuadSolveReport};
use crate::error::{invalid, Result};
use crate::linear::top_d_indices;
use crate::spectra::{mirror_step, SpectraPoint};
use crate::trs::sorted_eigen;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    /// Largest row-constraint violation tolerated in a primal point.
    pub feas_tol: f64,
    /// Relative primal-dual gap required to certify the upper bound.
    pub opt_tol: f64,
    pub max_iters: usize,
    /// Tolerance handed to the sphere oracle.
    pub tol: f64,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            opt_tol: 1e-3,
            max_iters: 20_000,
            tol: 1e-9,
        }
    }
}

impl RelaxConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.feas_tol, self.opt_tol, self.tol].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return invalid("relaxation tolerances must be positive");
        }
        if self.max_iters == 0 {
            return invalid("relaxation needs at least one iteration");
        }
        Ok(())
    }
}

/// Primal iterate and bounds of the relaxation. `zbar` and `q` are exactly
/// feasible (after repair); bounds refer to the unshifted objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxState {
    pub zbar: DMatrix<f64>,
    pub q: Vec<f64>,
    /// Step sizes for `Z̄`, for `q` and `S`, and for the multipliers.
    pub step_sizes: [f64; 3],
    /// Row-constraint violation of the last averaged iterate before repair.
    pub max_violation: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
    /// `upper_bound - lower_bound`.
    pub dual_gap: f64,
    pub iterations: usize,
    pub certified: bool,
}

fn m_weight(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.5
    }
}

/// Smallest `q_i` each row of `V` needs.
fn row_requirements(zbar: &DMatrix<f64>, d: usize) -> Vec<f64> {
    let dim = zbar.nrows() - 1;
    let sd = (d as f64).sqrt();
    (0..dim)
        .map(|i| {
            let mut need = 0.0f64;
            let mut row = 0.0;
            for j in 0..dim {
                let v = zbar[(i + 1, j + 1)].abs();
                need = need.max(v / m_weight(i, j));
                row += v;
            }
            need.max(row / sd)
        })
        .collect()
}

/// A `q` certifying feasibility of `zbar`, if one exists within `tol`.
fn feasible_q(zbar: &DMatrix<f64>, d: usize, tol: f64) -> Option<Vec<f64>> {
    let r = row_requirements(zbar, d);
    let dim = r.len() as f64;
    let total: f64 = r.iter().sum();
    if r.iter().any(|&v| v > 1.0 + tol) || total > d as f64 + tol {
        return None;
    }
    let r: Vec<f64> = r.into_iter().map(|v| v.min(1.0)).collect();
    let total: f64 = r.iter().sum::<f64>().min(d as f64);
    let spare = dim - total;
    let fill = if spare > 0.0 { (d as f64 - total) / spare } else { 0.0 };
    let q: Vec<f64> = r.iter().map(|&v| (v + (1.0 - v) * fill).clamp(0.0, 1.0)).collect();
    project_capped_simplex(&q, d as f64).ok()
}

/// Worst violation of the row constraints for the pair `(zbar, q)`.
fn violation(zbar: &DMatrix<f64>, q: &[f64], d: usize) -> f64 {
    let dim = q.len();
    let sd = (d as f64).sqrt();
    let mut worst = 0.0f64;
    for i in 0..dim {
        let mut row = 0.0;
        for j in 0..dim {
            let v = zbar[(i + 1, j + 1)].abs();
            worst = worst.max(v - m_weight(i, j) * q[i]);
            row += v;
        }
        worst = worst.max(row - sd * q[i]);
    }
    worst.max((zbar[(0, 0)] - 1.0).abs())
}

fn bordered(a: &DMatrix<f64>, t: &DVector<f64>) -> DMatrix<f64> {
    let dim = a.nrows();
    let mut at = DMatrix::zeros(dim + 1, dim + 1);
    at.view_mut((1, 1), (dim, dim)).copy_from(a);
    for k in 0..dim {
        at[(0, k + 1)] = 0.5 * t[k];
        at[(k + 1, 0)] = 0.5 * t[k];
    }
    at
}

fn rank_one(z: &DVector<f64>) -> DMatrix<f64> {
    let dim = z.len();
    let mut w = DVector::zeros(dim + 1);
    w[0] = 1.0;
    w.rows_mut(1, dim).copy_from(z);
    &w * w.transpose()
}

/// Congruence scaling to `Z̄₀₀ = 1`, `Tr V = 1`.
fn normalize_corner(zbar: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let dim = zbar.nrows() - 1;
    let z00 = zbar[(0, 0)];
    let tv = zbar.trace() - z00;
    if !(z00 > 0.0 && tv > 0.0) {
        return None;
    }
    let mut s = DVector::from_element(dim + 1, 1.0 / tv.sqrt());
    s[0] = 1.0 / z00.sqrt();
    let out = DMatrix::from_fn(dim + 1, dim + 1, |i, j| s[i] * zbar[(i, j)] * s[j]);
    Some((&out + out.transpose()) * 0.5)
}

struct Candidate {
    zbar: DMatrix<f64>,
    q: Vec<f64>,
    value: f64,
}

/// Moves `zbar` toward the feasible anchor just far enough to satisfy the
/// row constraints. Feasible mixing weights form an interval containing 1,
/// so bisection finds the smallest one.
fn repair(zbar: &DMatrix<f64>, anchor: &Candidate, at: &DMatrix<f64>, d: usize, tol: f64) -> Option<Candidate> {
    let z = normalize_corner(zbar)?;
    let value_of = |m: &DMatrix<f64>| at.component_mul(m).sum();
    if let Some(q) = feasible_q(&z, d, tol) {
        let value = value_of(&z);
        return Some(Candidate { zbar: z, q, value });
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let mix = &z * (1.0 - mid) + &anchor.zbar * mid;
        if feasible_q(&mix, d, tol).is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mix = &z * (1.0 - hi) + &anchor.zbar * hi;
    let q = feasible_q(&mix, d, tol)?;
    let value = value_of(&mix);
    Some(Candidate { zbar: mix, q, value })
}

/// Multipliers of the row constraints written with a slack matrix `S`:
/// `±V_ij ≤ S_ij` (`pos`, `neg`), `S_ij ≤ M_ij q_i` (`cap`),
/// `Σ_j S_ij ≤ √d q_i` (`row`), and `Z̄₀₀ = 1` (`corner`).
#[derive(Debug, Clone, PartialEq)]
struct Multipliers {
    pos: DMatrix<f64>,
    neg: DMatrix<f64>,
    cap: DMatrix<f64>,
    row: DVector<f64>,
    corner: f64,
}

impl Multipliers {
    fn zeros(dim: usize) -> Self {
        Self {
            pos: DMatrix::zeros(dim, dim),
            neg: DMatrix::zeros(dim, dim),
            cap: DMatrix::zeros(dim, dim),
            row: DVector::zeros(dim),
            corner: 0.0,
        }
    }

    fn axpy(&mut self, w: f64, other: &Self) {
        self.pos += &other.pos * w;
        self.neg += &other.neg * w;
        self.cap += &other.cap * w;
        self.row += &other.row * w;
        self.corner += w * other.corner;
    }

    fn scaled(&self, w: f64) -> Self {
        let mut out = Self::zeros(self.row.len());
        out.axpy(w, self);
        out
    }
}

/// Objective coefficients seen by each primal block at fixed multipliers.
struct Reduced {
    zbar: DMatrix<f64>,
    q: Vec<f64>,
    slack: DMatrix<f64>,
}

fn reduced_costs(at: &DMatrix<f64>, y: &Multipliers, d: usize) -> Reduced {
    let dim = y.row.len();
    let sd = (d as f64).sqrt();
    let diff = &y.pos - &y.neg;
    let sym = (&diff + diff.transpose()) * 0.5;
    let mut zbar = at.clone();
    for i in 0..dim {
        for j in 0..dim {
            zbar[(i + 1, j + 1)] -= sym[(i, j)];
        }
    }
    zbar[(0, 0)] -= y.corner;
    let q = (0..dim)
        .map(|i| (0..dim).map(|j| m_weight(i, j) * y.cap[(i, j)]).sum::<f64>() + sd * y.row[i])
        .collect();
    let slack = DMatrix::from_fn(dim, dim, |i, j| y.pos[(i, j)] + y.neg[(i, j)] - y.cap[(i, j)] - y.row[i]);
    Reduced { zbar, q, slack }
}

/// Lagrangian dual function. The maximum over the outer sets (trace-2
/// spectrahedron, capped simplex, unit box) is in closed form and bounds the
/// relaxation from above whenever the inequality multipliers are
/// non-negative.
fn dual_bound(at: &DMatrix<f64>, y: &Multipliers, d: usize) -> Result<f64> {
    let red = reduced_costs(at, y, d);
    let (vals, _) = sorted_eigen(red.zbar, "relaxation dual bound")?;
    let top = top_d_indices(&red.q, d).iter().map(|&i| red.q[i]).sum::<f64>();
    let slack: f64 = red.slack.iter().map(|v| v.max(0.0)).sum();
    Ok(2.0 * vals[0] + top + slack + y.corner)
}

/// Euclidean norm of the constraint operator, by power iteration.
fn operator_norm(dim: usize, d: usize) -> f64 {
    let sd = (d as f64).sqrt();
    let apply = |v: &DMatrix<f64>, s: &DMatrix<f64>, q: &DVector<f64>, z00: f64| Multipliers {
        pos: v - s,
        neg: -v - s,
        cap: DMatrix::from_fn(dim, dim, |i, j| s[(i, j)] - m_weight(i, j) * q[i]),
        row: DVector::from_fn(dim, |i, _| s.row(i).sum() - sd * q[i]),
        corner: z00,
    };
    let adjoint = |y: &Multipliers| {
        let diff = &y.pos - &y.neg;
        let v = (&diff + diff.transpose()) * 0.5;
        let s = DMatrix::from_fn(dim, dim, |i, j| -y.pos[(i, j)] - y.neg[(i, j)] + y.cap[(i, j)] + y.row[i]);
        let q = DVector::from_fn(dim, |i, _| -(0..dim).map(|j| m_weight(i, j) * y.cap[(i, j)]).sum::<f64>() - sd * y.row[i]);
        (v, s, q, y.corner)
    };
    let v0 = DMatrix::from_fn(dim, dim, |i, j| 1.0 + ((i * 7 + j * 3) % 5) as f64);
    let mut v = (&v0 + v0.transpose()) * 0.5;
    let mut s = DMatrix::from_fn(dim, dim, |i, j| 1.0 + ((i + 2 * j) % 3) as f64);
    let mut q = DVector::from_element(dim, 1.0);
    let mut z00 = 1.0;
    let mut est = 1.0;
    for _ in 0..100 {
        let (v2, s2, q2, z2) = adjoint(&apply(&v, &s, &q, z00));
        let nrm = (v2.norm_squared() + s2.norm_squared() + q2.norm_squared() + z2 * z2).sqrt();
        if nrm == 0.0 {
            break;
        }
        est = nrm.sqrt();
        v = v2 / nrm;
        s = s2 / nrm;
        q = q2 / nrm;
        z00 = z2 / nrm;
    }
    est
}

/// Solves the relaxation, rounds `q` to its `d` largest entries (ties to the
/// lowest index) and evaluates the rounded support exactly.
pub fn relax_select(qp: &QuadProblem, d: usize, cfg: &RelaxConfig) -> Result<(RelaxState, QuadSolveReport)> {
    let dim = qp.dim();
    validate_budget(d, dim)?;
    cfg.validate()?;
    let shift = qp.shift();
    let raw = bordered(qp.a(), qp.t());
    let scale = raw.amax().max(f64::MIN_POSITIVE);
    // Unit-scale coefficients inside the loop; values are rescaled on output.
    let at = raw / scale;
    let sd = (d as f64).sqrt();
    let gap_ok = |u: f64, l: f64| (u - l) * scale <= cfg.opt_tol * (1.0 + (u * scale + shift).abs());

    // A rank-one point on a greedy support is feasible and anchors the repair.
    let greedy = greedy_select(qp, d, cfg.tol)?;
    let anchor_q = {
        let mut ind = vec![0.0; dim];
        greedy.support.iter().for_each(|&k| ind[k] = 1.0);
        project_capped_simplex(&ind, d as f64)?
    };
    let anchor_z = rank_one(&greedy.z.as_dvector());
    let anchor = Candidate {
        value: at.component_mul(&anchor_z).sum(),
        zbar: anchor_z,
        q: anchor_q,
    };
    let mut best = Candidate {
        zbar: anchor.zbar.clone(),
        q: anchor.q.clone(),
        value: anchor.value,
    };

    let knorm = operator_norm(dim, d);
    let tau = 0.9 / knorm;
    let sigma = 0.9 / knorm;
    // Entropy on the trace-2 spectrahedron is 1/2-strongly convex in the
    // nuclear norm, which dominates the Frobenius norm behind `knorm`.
    let tau_z = 0.5 * tau;

    let uniform = DMatrix::identity(dim + 1, dim + 1) * (2.0 / (dim + 1) as f64);
    let mut z = SpectraPoint::normalized(&(&anchor.zbar * 0.5 + uniform * 0.5), 2.0)?;
    let mut q = anchor.q.clone();
    let mut slack = DMatrix::from_fn(dim, dim, |i, j| anchor.zbar[(i + 1, j + 1)].abs());
    let mut y = Multipliers::zeros(dim);

    let mut upper = dual_bound(&at, &y, d)?;
    let mut z_sum = DMatrix::zeros(dim + 1, dim + 1);
    let mut q_sum = vec![0.0; dim];
    let mut y_sum = Multipliers::zeros(dim);
    let mut count = 0.0;
    let mut iterations = 0;
    let mut max_violation = 0.0;
    let mut restart_len = 64;
    for k in 0..cfg.max_iters {
        iterations = k + 1;
        let red = reduced_costs(&at, &y, d);
        let z_new = mirror_step(&z, &-&red.zbar, tau_z)?;
        let moved: Vec<f64> = q.iter().zip(&red.q).map(|(a, g)| a + tau * g).collect();
        let q_new = project_capped_simplex(&moved, d as f64)?;
        let slack_new = (&slack + &red.slack * tau).map(|v| v.clamp(0.0, 1.0));

        let zx = z_new.z() * 2.0 - z.z();
        let qx: Vec<f64> = q_new.iter().zip(&q).map(|(a, b)| 2.0 * a - b).collect();
        let sx = &slack_new * 2.0 - &slack;
        for i in 0..dim {
            let mut row = 0.0;
            for j in 0..dim {
                let v = zx[(i + 1, j + 1)];
                let sij = sx[(i, j)];
                y.pos[(i, j)] = (y.pos[(i, j)] + sigma * (v - sij)).max(0.0);
                y.neg[(i, j)] = (y.neg[(i, j)] + sigma * (-v - sij)).max(0.0);
                y.cap[(i, j)] = (y.cap[(i, j)] + sigma * (sij - m_weight(i, j) * qx[i])).max(0.0);
                row += sij;
            }
            y.row[i] = (y.row[i] + sigma * (row - sd * qx[i])).max(0.0);
        }
        y.corner += sigma * (zx[(0, 0)] - 1.0);
        z = z_new;
        q = q_new;
        slack = slack_new;

        z_sum += z.z();
        q_sum.iter_mut().zip(&q).for_each(|(s, v)| *s += v);
        y_sum.axpy(1.0, &y);
        count += 1.0;

        if count as usize == restart_len || k + 1 == cfg.max_iters {
            let z_avg = &z_sum / count;
            let q_avg: Vec<f64> = q_sum.iter().map(|s| s / count).collect();
            let y_avg = y_sum.scaled(1.0 / count);
            upper = upper.min(dual_bound(&at, &y_avg, d)?).min(dual_bound(&at, &y, d)?);
            max_violation = violation(&z_avg, &q_avg, d);
            if let Some(c) = repair(&z_avg, &anchor, &at, d, cfg.feas_tol) {
                if c.value > best.value {
                    best = c;
                }
            }
            if gap_ok(upper, best.value) {
                break;
            }
            z = SpectraPoint::normalized(&z_avg, 2.0)?;
            q = project_capped_simplex(&q_avg, d as f64)?;
            y = y_avg;
            z_sum.fill(0.0);
            q_sum.iter_mut().for_each(|s| *s = 0.0);
            y_sum = Multipliers::zeros(dim);
            count = 0.0;
            restart_len *= 2;
        }
    }
    // The relaxation value is at least the best feasible value.
    let upper = upper.max(best.value) * scale;
    let lower = best.value * scale;
    let feasible = violation(&best.zbar, &best.q, d) <= cfg.feas_tol;
    let certified = feasible && upper - lower <= cfg.opt_tol * (1.0 + (upper + shift).abs());

    let support = top_d_indices(&best.q, d);
    let mut report = report_for_support(qp, &support, d, QuadMethod::Relax, cfg.tol)?;
    report.upper_bound = Some(upper + shift);
    report.bound_certified = Some(certified);
    let state = RelaxState {
        zbar: best.zbar,
        q: best.q,
        step_sizes: [tau_z, tau, sigma],
        max_violation,
        upper_bound: upper + shift,
        lower_bound: lower + shift,
        dual_gap: upper - lower,
        iterations,
        certified,
    };
    Ok((state, report))
}

/// Greedy pre-screen to `d_prime` features followed by the relaxation on the
/// restricted problem. The relaxation bound then only covers the screened
/// features, so the report carries no upper bound.
pub fn prescreen_then_relax(qp: &QuadProblem, d: usize, d_prime: usize, cfg: &RelaxConfig) -> Result<(RelaxState, QuadSolveReport)> {
    let dim = qp.dim();
    validate_budget(d, dim)?;
    if d_prime < d {
        return invalid(format!("pre-screen size {d_prime} is below the budget {d}"));
    }
    if dim <= d_prime {
        return relax_select(qp, d, cfg);
    }
    let screened = greedy_select(qp, d_prime, cfg.tol)?.support;
    let sub = qp.restrict(&screened)?;
    let (state, sub_report) = relax_select(&sub, d, cfg)?;
    let support: Vec<usize> = sub_report.support.iter().map(|&k| screened[k]).collect();
    let report = report_for_support(qp, &support, d, QuadMethod::Relax, cfg.tol)?;
    Ok((state, report))
}
