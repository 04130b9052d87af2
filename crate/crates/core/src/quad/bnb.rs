use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{greedy_select, local_search, report_for_support, validate_budget, QuadMethod, QuadProblem, QuadSolveReport};
use crate::error::{Error, Result};
use crate::trs::lambda_set_fast;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbConfig {
    /// Largest `D` accepted.
    pub max_dim: usize,
    /// Explore the subtrees below the first few branching levels on the
    /// rayon pool. The returned support and value do not depend on this flag.
    pub parallel: bool,
    pub tol: f64,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            max_dim: 30,
            parallel: false,
            tol: 1e-9,
        }
    }
}

fn tie_tol(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

struct Search<'a> {
    qp: &'a QuadProblem,
    d: usize,
    incumbent: AtomicU64,
    nodes: AtomicU64,
    leaves: Mutex<Vec<(f64, Vec<usize>)>>,
    error: Mutex<Option<Error>>,
}

impl Search<'_> {
    fn best(&self) -> f64 {
        f64::from_bits(self.incumbent.load(Ordering::Relaxed))
    }

    fn offer(&self, value: f64, support: Vec<usize>) {
        let mut cur = self.incumbent.load(Ordering::Relaxed);
        while value > f64::from_bits(cur) {
            match self.incumbent.compare_exchange_weak(cur, value.to_bits(), Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => break,
                Err(seen) => cur = seen,
            }
        }
        if value + tie_tol(value) >= self.best() {
            self.leaves.lock().unwrap().push((value, support));
        }
    }

    fn eval(&self, support: &[usize]) -> Option<f64> {
        match lambda_set_fast(support, self.qp) {
            Ok(s) => Some(s.value),
            Err(e) => {
                self.error.lock().unwrap().get_or_insert(e);
                None
            }
        }
    }

    /// Decisions are made for features in index order; `next` is the first
    /// undecided feature and `forced` holds the included ones.
    fn visit(&self, forced: &mut Vec<usize>, next: usize, split_depth: usize) {
        let dim = self.qp.dim();
        let free = dim - next;
        if forced.len() == self.d || (next == dim && !forced.is_empty()) || forced.len() + free <= self.d {
            let mut leaf = forced.clone();
            if forced.len() < self.d {
                leaf.extend(next..dim);
            }
            if let Some(v) = self.eval(&leaf) {
                self.offer(v, leaf);
            }
            return;
        }
        self.nodes.fetch_add(1, Ordering::Relaxed);
        let mut all = forced.clone();
        all.extend(next..dim);
        let Some(bound) = self.eval(&all) else { return };
        if bound + tie_tol(bound) < self.best() {
            return;
        }
        if split_depth > 0 {
            let mut inc = forced.clone();
            inc.push(next);
            let mut exc = forced.clone();
            rayon::join(|| self.visit(&mut inc, next + 1, split_depth - 1), || self.visit(&mut exc, next + 1, split_depth - 1));
        } else {
            forced.push(next);
            self.visit(forced, next + 1, 0);
            forced.pop();
            self.visit(forced, next + 1, 0);
        }
    }
}

/// Exact maximizer of the sparse quadratic program with the default
/// configuration and tolerance `tol`.
pub fn exact_select_bnb(qp: &QuadProblem, d: usize, tol: f64) -> Result<QuadSolveReport> {
    exact_select_bnb_with(qp, d, &BnbConfig { tol, ..BnbConfig::default() })
}

/// Depth-first include/exclude search. A node with included set `F` and
/// undecided features `C` is bounded by `Λ(F ∪ C)`, which dominates every
/// descendant since feasible sets nest. The incumbent starts from greedy
/// followed by local search. Among supports whose values tie within `1e-9`
/// the lexicographically smallest is returned.
pub fn exact_select_bnb_with(qp: &QuadProblem, d: usize, cfg: &BnbConfig) -> Result<QuadSolveReport> {
    let dim = qp.dim();
    validate_budget(d, dim)?;
    if dim > cfg.max_dim {
        return Err(Error::DimensionCap { dim, cap: cfg.max_dim });
    }
    let greedy = greedy_select(qp, d, cfg.tol)?;
    let start = local_search(qp, d, &greedy.support, 10 * dim, cfg.tol)?;
    let search = Search {
        qp,
        d,
        incumbent: AtomicU64::new(f64::NEG_INFINITY.to_bits()),
        nodes: AtomicU64::new(0),
        leaves: Mutex::new(Vec::new()),
        error: Mutex::new(None),
    };
    if let Some(v) = search.eval(&start.support) {
        search.offer(v, start.support.clone());
    }
    let split = if cfg.parallel { 6.min(dim) } else { 0 };
    search.visit(&mut Vec::new(), 0, split);
    if let Some(e) = search.error.into_inner().unwrap() {
        return Err(e);
    }
    let leaves = search.leaves.into_inner().unwrap();
    let best = leaves.iter().map(|l| l.0).fold(f64::NEG_INFINITY, f64::max);
    let support = leaves
        .into_iter()
        .filter(|(v, _)| *v + tie_tol(best) >= best)
        .map(|(_, s)| s)
        .min()
        .expect("at least one leaf is evaluated");
    let mut report = report_for_support(qp, &support, d, QuadMethod::Exact, cfg.tol)?;
    report.node_count = Some(search.nodes.into_inner());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn small_example() {
        let qp = QuadProblem::new(DMatrix::from_diagonal(&DVector::from_column_slice(&[5.0, 3.0, 1.0])), DVector::from_column_slice(&[0.0, 2.0, 0.0])).unwrap();
        let r = exact_select_bnb(&qp, 2, 1e-9).unwrap();
        assert_eq!(r.support, vec![0, 1]);
        assert!((r.value - 5.5).abs() < 1e-9);
        let full = exact_select_bnb(&qp, 3, 1e-9).unwrap();
        let trs = crate::trs::trs_max(&qp.unshifted_a(), qp.t(), 1e-9).unwrap();
        assert!((full.value - trs.value).abs() < 1e-9);
        assert!(full.node_count.unwrap() <= 1);
    }

    #[test]
    fn cap_enforced() {
        let qp = QuadProblem::new(DMatrix::identity(31, 31), DVector::zeros(31)).unwrap();
        assert!(matches!(exact_select_bnb(&qp, 2, 1e-9), Err(Error::DimensionCap { .. })));
    }

    #[test]
    fn ties_resolve_to_smallest_support() {
        let qp = QuadProblem::new(DMatrix::identity(4, 4), DVector::zeros(4)).unwrap();
        for parallel in [false, true] {
            let cfg = BnbConfig { parallel, ..BnbConfig::default() };
            let r = exact_select_bnb_with(&qp, 2, &cfg).unwrap();
            assert_eq!(r.support, vec![0, 1]);
        }
    }
}
