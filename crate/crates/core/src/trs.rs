//! Trust-region subproblem on the unit sphere:
//! `max { zᵀAz + tᵀz : ‖z‖₂ = 1 }`.
//!
//! The multiplier is read off the rightmost eigenvalue of a `2k × 2k`
//! linear pencil, then polished on the secular equation in the eigenbasis of
//! `A`. When the pencil eigenvector is orthogonal to `t` (the hard case) the
//! solution is assembled from the complement of the leading eigenspace plus a
//! leading-eigenvector component that restores unit norm.

use nalgebra::linalg::{Schur, SymmetricEigen};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::QuadProblem;

/// Maximizer of a sphere-constrained quadratic with its optimality certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrsSolution {
    pub value: f64,
    pub z: DVector<f64>,
    /// Multiplier `μ` with `2(μI - A)z = t` and `μ ≥ λ_max(A)`.
    pub mu: f64,
    /// `‖2(μI - A)z - t‖₂`
    pub kkt_residual: f64,
    pub hard_case: bool,
}

const EIG_ITERS: usize = 10_000;

pub(crate) fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenpairs sorted by decreasing eigenvalue.
pub(crate) fn sorted_eigen(a: DMatrix<f64>, ctx: &'static str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, EIG_ITERS).ok_or(Error::EigenFailure(ctx))?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

fn validate(a: &DMatrix<f64>, t: &DVector<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    if k == 0 || a.ncols() != k {
        return invalid(format!("TRS matrix must be square and non-empty, got {}x{}", a.nrows(), a.ncols()));
    }
    if t.len() != k {
        return Err(Error::DimensionMismatch {
            context: "TRS linear term".into(),
            expected: k,
            found: t.len(),
        });
    }
    if !(tol > 0.0) {
        return invalid("TRS tolerance must be positive");
    }
    if a.iter().chain(t.iter()).any(|v| !v.is_finite()) {
        return invalid("TRS data must be finite");
    }
    let scale = a.amax().max(1.0);
    let asym = max_asymmetry(a);
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok((a + a.transpose()) * 0.5)
}

/// Rightmost eigenvalue of the pencil `M0 + λ M1` for the minimization form
/// `min pᵀBp + 2gᵀp` with `B = -A`, `g = -t/2`, and its null vector.
fn pencil(a: &DMatrix<f64>, t: &DVector<f64>) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let k = a.nrows();
    let g = t * -0.5;
    let mut m0 = DMatrix::zeros(2 * k, 2 * k);
    let mut m1 = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        m0[(i, i)] = -1.0;
        m1[(i, k + i)] = 1.0;
        m1[(k + i, i)] = 1.0;
        for j in 0..k {
            m0[(i, k + j)] = -a[(i, j)];
            m0[(k + i, j)] = -a[(i, j)];
            m0[(k + i, k + j)] = -g[i] * g[j];
        }
    }
    // M1 is its own inverse, so the pencil eigenvalues are those of -M1·M0.
    let op = -(&m1 * &m0);
    let schur = Schur::try_new(op, f64::EPSILON, EIG_ITERS).ok_or(Error::EigenFailure("TRS pencil"))?;
    let evs = schur.complex_eigenvalues();
    let scale = evs.iter().map(|c| c.norm()).fold(1.0f64, f64::max);
    let real_max = evs
        .iter()
        .filter(|c| c.im.abs() <= 1e-8 * scale)
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let lambda = if real_max.is_finite() {
        real_max
    } else {
        evs.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
    };
    let msym = &m0 + &m1 * lambda;
    let (vals, vecs) = sorted_eigen(msym, "TRS pencil null vector")?;
    let idx = (0..vals.len())
        .min_by(|&i, &j| vals[i].abs().total_cmp(&vals[j].abs()).then(i.cmp(&j)))
        .unwrap_or(0);
    let y = vecs.column(idx);
    let y1 = y.rows(0, k).into_owned();
    let y2 = y.rows(k, k).into_owned();
    Ok((lambda, y1, y2))
}

/// Solves `Σ b_i² / (4(μ - λ_i)²) = 1` for `μ > lead` over the indices in
/// `idx` by safeguarded Newton on `1/‖w(μ)‖ - 1`.
fn secular_root(lams: &[f64], b: &[f64], idx: &[usize], lead: f64, start: Option<f64>) -> f64 {
    let bnorm = idx.iter().map(|&i| b[i] * b[i]).sum::<f64>().sqrt();
    let mut lo = lead;
    let mut hi = lead + 0.5 * bnorm;
    let eval = |mu: f64| -> (f64, f64) {
        let mut n2 = 0.0;
        let mut dsum = 0.0;
        for &i in idx {
            let gap = mu - lams[i];
            let w = b[i] / (2.0 * gap);
            n2 += w * w;
            dsum += w * w / gap;
        }
        let n = n2.sqrt();
        (1.0 / n - 1.0, dsum / (n2 * n))
    };
    let mut mu = match start {
        Some(s) if s > lo && s < hi => s,
        _ => 0.5 * (lo + hi),
    };
    for _ in 0..200 {
        let (phi, dphi) = eval(mu);
        if !phi.is_finite() {
            lo = mu;
            mu = 0.5 * (lo + hi);
            continue;
        }
        if phi.abs() <= 4.0 * f64::EPSILON {
            break;
        }
        if phi < 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let mut next = mu - phi / dphi;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - mu).abs() <= f64::EPSILON * mu.abs().max(1.0) {
            mu = next;
            break;
        }
        mu = next;
    }
    mu
}

struct Candidate {
    w: DVector<f64>,
    hard: bool,
}

fn secular_candidate(lams: &[f64], b: &[f64], start: Option<f64>) -> Option<Candidate> {
    let lead = lams[0];
    let all: Vec<usize> = (0..lams.len()).collect();
    let mu = secular_root(lams, b, &all, lead, start);
    if !(mu > lead) {
        return None;
    }
    let w = DVector::from_iterator(lams.len(), (0..lams.len()).map(|i| b[i] / (2.0 * (mu - lams[i]))));
    w.iter().all(|v| v.is_finite()).then_some(Candidate { w, hard: false })
}

fn hard_candidate(lams: &[f64], b: &[f64]) -> Candidate {
    let k = lams.len();
    let lead = lams[0];
    let scale = lams.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let gap_tol = 1e-8 * scale;
    let comp: Vec<usize> = (0..k).filter(|&i| lead - lams[i] > gap_tol).collect();
    let mut w = DVector::zeros(k);
    let nc2: f64 = comp.iter().map(|&i| (b[i] / (2.0 * (lead - lams[i]))).powi(2)).sum();
    if nc2 <= 1.0 {
        for &i in &comp {
            w[i] = b[i] / (2.0 * (lead - lams[i]));
        }
        w[0] = (1.0 - nc2).max(0.0).sqrt();
    } else {
        let mu = secular_root(lams, b, &comp, lead, None);
        for &i in &comp {
            w[i] = b[i] / (2.0 * (mu - lams[i]));
        }
    }
    Candidate { w, hard: true }
}

fn finish(a: &DMatrix<f64>, t: &DVector<f64>, vecs: &DMatrix<f64>, lead: f64, cand: &Candidate) -> TrsSolution {
    let mut z = vecs * &cand.w;
    let nrm = z.norm();
    if nrm > 0.0 {
        z /= nrm;
    }
    let az = a * &z;
    let quad = z.dot(&az);
    let lin = t.dot(&z);
    let mu = (quad + 0.5 * lin).max(lead);
    let kkt_residual = ((&z * mu - &az) * 2.0 - t).norm();
    TrsSolution {
        value: quad + lin,
        z,
        mu,
        kkt_residual,
        hard_case: cand.hard,
    }
}

fn leading_vector_solution(a: &DMatrix<f64>, lams: &[f64], vecs: &DMatrix<f64>) -> TrsSolution {
    let mut z = vecs.column(0).into_owned();
    if let Some(first) = z.iter().find(|v| v.abs() > 1e-12).copied() {
        if first < 0.0 {
            z = -z;
        }
    }
    let az = a * &z;
    let value = z.dot(&az);
    let mu = lams[0];
    let kkt_residual = ((&z * mu - az) * 2.0).norm();
    TrsSolution {
        value,
        z,
        mu,
        kkt_residual,
        hard_case: true,
    }
}

/// Global maximum of `zᵀAz + tᵀz` over the unit sphere.
pub fn trs_max(a: &DMatrix<f64>, t: &DVector<f64>, tol: f64) -> Result<TrsSolution> {
    let a = validate(a, t, tol)?;
    let (lams, vecs) = sorted_eigen(a.clone(), "TRS matrix")?;
    if t.iter().all(|&v| v == 0.0) {
        return Ok(leading_vector_solution(&a, &lams, &vecs));
    }
    let b: Vec<f64> = (vecs.transpose() * t).iter().copied().collect();
    let (lambda, y1, y2) = pencil(&a, t)?;
    let g = t * -0.5;
    let hard = y2.dot(&g).abs() <= tol * g.norm() * y2.norm() || y1.norm() < 1e-10;
    let lead = lams[0];
    let sol = if hard {
        finish(&a, t, &vecs, lead, &hard_candidate(&lams, &b))
    } else {
        let primary = secular_candidate(&lams, &b, Some(lambda)).map(|c| finish(&a, t, &vecs, lead, &c));
        match primary {
            Some(s) if s.kkt_residual <= tol * (1.0 + t.norm()) => s,
            other => {
                // Near-degenerate multiplier: keep whichever candidate is better.
                let fallback = finish(&a, t, &vecs, lead, &hard_candidate(&lams, &b));
                match other {
                    Some(s) if s.value >= fallback.value => s,
                    _ => fallback,
                }
            }
        }
    };
    Ok(sol)
}

/// Same optimum without the pencil step: both the secular and the hard-case
/// candidates are formed and the better one kept. Used in inner loops.
pub(crate) fn trs_max_eigen(a: &DMatrix<f64>, t: &DVector<f64>) -> Result<TrsSolution> {
    let a = (a + a.transpose()) * 0.5;
    let (lams, vecs) = sorted_eigen(a.clone(), "TRS matrix")?;
    if t.iter().all(|&v| v == 0.0) {
        return Ok(leading_vector_solution(&a, &lams, &vecs));
    }
    let b: Vec<f64> = (vecs.transpose() * t).iter().copied().collect();
    let lead = lams[0];
    let fallback = finish(&a, t, &vecs, lead, &hard_candidate(&lams, &b));
    match secular_candidate(&lams, &b, None).map(|c| finish(&a, t, &vecs, lead, &c)) {
        Some(s) if s.value >= fallback.value => Ok(s),
        _ => Ok(fallback),
    }
}

/// `Λ(S)`: the sphere maximum restricted to coordinates in `S`, embedded back
/// into length `D`. Values and multipliers refer to the unshifted problem.
pub fn lambda_set(support: &[usize], qp: &QuadProblem, tol: f64) -> Result<TrsSolution> {
    if support.is_empty() {
        return Err(Error::EmptySet);
    }
    let dim = qp.dim();
    if let Some(&bad) = support.iter().find(|&&k| k >= dim) {
        return invalid(format!("support index {bad} out of range for D = {dim}"));
    }
    let sub_a = qp.a().select_rows(support).select_columns(support);
    let sub_t = DVector::from_iterator(support.len(), support.iter().map(|&k| qp.t()[k]));
    let sol = trs_max(&sub_a, &sub_t, tol)?;
    Ok(embed(sol, support, dim, qp.shift()))
}

/// Pencil-free variant of [`lambda_set`] for search loops.
pub(crate) fn lambda_set_fast(support: &[usize], qp: &QuadProblem) -> Result<TrsSolution> {
    if support.is_empty() {
        return Err(Error::EmptySet);
    }
    let sub_a = qp.a().select_rows(support).select_columns(support);
    let sub_t = DVector::from_iterator(support.len(), support.iter().map(|&k| qp.t()[k]));
    let sol = trs_max_eigen(&sub_a, &sub_t)?;
    Ok(embed(sol, support, qp.dim(), qp.shift()))
}

fn embed(sol: TrsSolution, support: &[usize], dim: usize, shift: f64) -> TrsSolution {
    let mut z = DVector::zeros(dim);
    for (i, &k) in support.iter().enumerate() {
        z[k] = sol.z[i];
    }
    TrsSolution {
        value: sol.value + shift,
        z,
        mu: sol.mu + shift,
        kkt_residual: sol.kkt_residual,
        hard_case: sol.hard_case,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn examples() {
        let s = trs_max(&diag(&[3.0, 1.0]), &DVector::zeros(2), 1e-9).unwrap();
        assert!((s.value - 3.0).abs() < 1e-12);
        assert!((s.z[0].abs() - 1.0).abs() < 1e-12 && s.z[1].abs() < 1e-12);
        assert!(s.hard_case);

        let s = trs_max(&DMatrix::zeros(2, 2), &DVector::from_column_slice(&[3.0, 4.0]), 1e-9).unwrap();
        assert!((s.value - 5.0).abs() < 1e-12);
        assert!((s.z[0] - 0.6).abs() < 1e-12 && (s.z[1] - 0.8).abs() < 1e-12);

        let s = trs_max(&diag(&[2.0, 1.0]), &DVector::from_column_slice(&[0.0, 1.0]), 1e-9).unwrap();
        assert!((s.value - 2.25).abs() < 1e-12);
        assert!((s.z[0].abs() - 3f64.sqrt() / 2.0).abs() < 1e-9);
        assert!((s.z[1] - 0.5).abs() < 1e-9);
        assert!(s.hard_case);
    }

    #[test]
    fn rejects_bad_input() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = 1.0;
        assert!(matches!(trs_max(&a, &DVector::zeros(2), 1e-9), Err(Error::NotSymmetric(_))));
        assert!(trs_max(&DMatrix::zeros(2, 2), &DVector::zeros(3), 1e-9).is_err());
    }

    fn random_instance(rng: &mut ChaCha8Rng, k: usize) -> (DMatrix<f64>, DVector<f64>) {
        let b = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let a = (&b + b.transpose()) * 0.5;
        let t = DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0));
        (a, t)
    }

    #[test]
    fn negating_t_negates_argument() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let k = rng.random_range(1..=6);
            let (a, t) = random_instance(&mut rng, k);
            let p = trs_max(&a, &t, 1e-9).unwrap();
            let q = trs_max(&a, &(-&t), 1e-9).unwrap();
            assert!((p.value - q.value).abs() < 1e-10);
            if !p.hard_case && !q.hard_case {
                assert!((&p.z + &q.z).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn eigen_variant_agrees_with_pencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let k = rng.random_range(1..=8);
            let (a, t) = random_instance(&mut rng, k);
            let p = trs_max(&a, &t, 1e-9).unwrap();
            let q = trs_max_eigen(&a, &t).unwrap();
            assert!((p.value - q.value).abs() < 1e-10, "{} vs {}", p.value, q.value);
        }
    }

    #[test]
    fn constructed_hard_case() {
        // t orthogonal to the leading eigenvector and small enough that the
        // multiplier sits at λ_max.
        let a = diag(&[4.0, 1.0, 0.0]);
        let t = DVector::from_column_slice(&[0.0, 1.0, 1.0]);
        let s = trs_max(&a, &t, 1e-9).unwrap();
        // complement part: w = (1/6, 1/8); value = 4 w0² + 1·w1² + w1 + w2
        let (w1, w2) = (1.0 / 6.0, 1.0 / 8.0);
        let w0 = (1.0f64 - w1 * w1 - w2 * w2).sqrt();
        let expect = 4.0 * w0 * w0 + w1 * w1 + w1 + w2;
        assert!((s.value - expect).abs() < 1e-10, "{} vs {expect}", s.value);
        assert!(s.hard_case);
        assert!(s.kkt_residual < 1e-9);
        assert!((s.mu - 4.0).abs() < 1e-9);
    }
}
