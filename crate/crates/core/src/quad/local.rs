use super::{report_for_support, validate_budget, QuadMethod, QuadProblem, QuadSolveReport};
use crate::error::{invalid, Result};
use crate::trs::lambda_set_fast;

fn tie_eps(v: f64) -> f64 {
    1e-12 * (1.0 + v.abs())
}

fn with_feature(support: &[usize], j: usize) -> Vec<usize> {
    let mut s = support.to_vec();
    let pos = s.partition_point(|&k| k < j);
    s.insert(pos, j);
    s
}

/// Adds one feature at a time, each round taking the feature whose addition
/// maximizes `Λ`. Ties go to the lowest index.
pub fn greedy_select(qp: &QuadProblem, d: usize, tol: f64) -> Result<QuadSolveReport> {
    let dim = qp.dim();
    validate_budget(d, dim)?;
    let mut support: Vec<usize> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..dim {
            if support.binary_search(&j).is_ok() {
                continue;
            }
            let v = lambda_set_fast(&with_feature(&support, j), qp)?.value;
            if best.is_none_or(|(bv, _)| v > bv + tie_eps(bv)) {
                best = Some((v, j));
            }
        }
        let (_, j) = best.expect("a free feature exists while |S| < d <= D");
        support = with_feature(&support, j);
    }
    report_for_support(qp, &support, d, QuadMethod::Greedy, tol)
}

/// 1-swap local search: replaces a selected feature by an unselected one
/// whenever `Λ` grows by more than `tol`, restarting the scan after each
/// accepted swap. Stops at a local optimum or after `max_sweeps` scans.
pub fn local_search(qp: &QuadProblem, d: usize, init: &[usize], max_sweeps: usize, tol: f64) -> Result<QuadSolveReport> {
    let dim = qp.dim();
    validate_budget(d, dim)?;
    let mut support = init.to_vec();
    support.sort_unstable();
    support.dedup();
    if support.len() != d.min(dim) || support.len() != init.len() {
        return invalid(format!("initial support must hold {} distinct features", d.min(dim)));
    }
    if support.iter().any(|&k| k >= dim) {
        return invalid("initial support index out of range");
    }
    let mut current = lambda_set_fast(&support, qp)?.value;
    let mut sweeps = 0;
    'outer: while sweeps < max_sweeps {
        sweeps += 1;
        for pos in 0..support.len() {
            for j in 0..dim {
                if support.binary_search(&j).is_ok() {
                    continue;
                }
                let mut cand = support.clone();
                cand.remove(pos);
                let cand = with_feature(&cand, j);
                let v = lambda_set_fast(&cand, qp)?.value;
                if v > current + tol {
                    support = cand;
                    current = v;
                    continue 'outer;
                }
            }
        }
        break;
    }
    report_for_support(qp, &support, d, QuadMethod::Local, tol)
}
