use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use mmdsel::bench::fdp_ndp;
use mmdsel::linear::{linear_select, LinearCoefficients};
use mmdsel::mmd::{gram_matrix, mmd_sq};
use mmdsel::quad::{exact_select_bnb, greedy_select, local_search, QuadProblem};
use mmdsel::spectra::{bregman, mirror_step, SpectraPoint};
use mmdsel::testing::permutation_calibrate;
use mmdsel::trs::trs_max;
use mmdsel::{KernelSpec, RandomSource, SelectionVector, TwoSampleData};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn sym(k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(k, k).prop_map(|b| (&b + b.transpose()) * 0.5)
}

fn unit(dim: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(|v| DVector::from_vec(v).normalize())
}

fn point(k: usize) -> impl Strategy<Value = SpectraPoint> {
    matrix(k, k).prop_map(move |b| {
        let z = &b * b.transpose() + DMatrix::identity(k, k) * 0.05;
        let t = z.trace();
        SpectraPoint::new(z / t, 1.0).unwrap()
    })
}

fn kernels() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        Just(KernelSpec::Linear),
        (0.1..3.0f64).prop_map(|c| KernelSpec::Quadratic { c }),
        (0.1..3.0f64).prop_map(|gamma| KernelSpec::Gaussian { gamma }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn statistic_is_symmetric_in_the_groups(
        (x, y, z) in (2usize..5).prop_flat_map(|d| (matrix(4, d), matrix(3, d), unit(d))),
        spec in kernels(),
    ) {
        let dim = z.len();
        let z = SelectionVector::new(z.iter().copied().collect(), dim).unwrap();
        let data = TwoSampleData::new(x, y).unwrap();
        let a = mmd_sq(&spec, &z, &data).unwrap();
        let b = mmd_sq(&spec, &z, &data.swapped()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn gaussian_and_nonnegative_quadratic_grams_are_psd(
        (pts, z) in (2usize..5).prop_flat_map(|d| (matrix(6, d), unit(d))),
        c in 0.1..3.0f64,
    ) {
        let dim = z.len();
        let z = SelectionVector::new(z.iter().map(|v| v.abs()).collect(), dim).unwrap();
        for spec in [KernelSpec::Gaussian { gamma: c }, KernelSpec::Quadratic { c }, KernelSpec::Linear] {
            let g = gram_matrix(&spec, &z, &pts).unwrap();
            let min = g.clone().symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= -1e-8 * (1.0 + g.amax()), "{spec:?}: {min}");
        }
    }

    #[test]
    fn linear_selection_attains_the_top_d_norm(a in prop::collection::vec(0.0..5.0f64, 1..15), d in 1usize..15) {
        let d = d.min(a.len());
        let sel = linear_select(&LinearCoefficients::new(a.clone()).unwrap(), d).unwrap();
        let z = sel.selection.z();
        prop_assert!((z.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12 || sel.no_signal);
        prop_assert!(sel.selection.support().len() <= d);
        let mut sq: Vec<f64> = a.iter().map(|v| v * v).collect();
        sq.sort_by(|x, y| y.total_cmp(x));
        prop_assert!((sel.objective - sq[..d].iter().sum::<f64>().sqrt()).abs() < 1e-12);
    }

    #[test]
    fn quadratic_solvers_are_ordered(
        (a, t) in (2usize..8).prop_flat_map(|k| (sym(k), prop::collection::vec(-2.0..2.0f64, k))),
        d in 1usize..4,
    ) {
        let dim = a.nrows();
        let d = d.min(dim);
        let qp = QuadProblem::new(a, DVector::from_vec(t)).unwrap();
        let greedy = greedy_select(&qp, d, 1e-10).unwrap();
        let local = local_search(&qp, d, &greedy.support, 100, 1e-10).unwrap();
        let exact = exact_select_bnb(&qp, d, 1e-10).unwrap();
        let tol = 1e-9 * (1.0 + exact.value.abs());
        prop_assert!(greedy.value <= local.value + tol);
        prop_assert!(local.value <= exact.value + tol);
        prop_assert!((qp.objective(exact.z.z()) - exact.value).abs() <= 1e-8 * (1.0 + exact.value.abs()));
    }

    #[test]
    fn trust_region_solution_carries_a_certificate(
        (a, t) in (1usize..9).prop_flat_map(|k| (sym(k), prop::collection::vec(-2.0..2.0f64, k))),
    ) {
        let k = a.nrows();
        let t = DVector::from_vec(t);
        let sol = trs_max(&a, &t, 1e-12).unwrap();
        let lmax = a.clone().symmetric_eigen().eigenvalues.max();
        prop_assert!(sol.mu >= lmax - 1e-7);
        let resid = ((DMatrix::identity(k, k) * sol.mu - &a) * &sol.z * 2.0 - &t).norm();
        prop_assert!(resid <= 1e-6 * (1.0 + t.norm()));
        prop_assert!((sol.z.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mirror_steps_stay_feasible((p, g) in (2usize..6).prop_flat_map(|k| (point(k), sym(k))), step in 0.0..2.0f64) {
        let q = mirror_step(&p, &g, step).unwrap();
        prop_assert!((q.z().trace() - 1.0).abs() <= 1e-9);
        prop_assert!(q.z().clone().symmetric_eigen().eigenvalues.min() >= -1e-9);
        prop_assert!((q.z() - q.z().transpose()).amax() <= 1e-10);
    }

    #[test]
    fn bregman_divergence_is_nonnegative((p, q) in (2usize..6).prop_flat_map(|k| (point(k), point(k)))) {
        prop_assert!(bregman(&p, &q).unwrap() >= -1e-10);
        prop_assert!(bregman(&p, &p).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn discovery_proportions_lie_in_the_unit_interval(
        sel in prop::collection::btree_set(0usize..20, 1..6),
        truth in prop::collection::btree_set(0usize..20, 1..6),
    ) {
        let sel: Vec<usize> = sel.into_iter().collect();
        let truth: Vec<usize> = truth.into_iter().collect();
        let m = fdp_ndp(&sel, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.fdp) && (0.0..=1.0).contains(&m.ndp));
        let hits = sel.iter().filter(|k| truth.contains(k)).count() as f64;
        prop_assert!((m.fdp - (1.0 - hits / sel.len() as f64)).abs() < 1e-12);
        prop_assert!((m.ndp - (1.0 - hits / truth.len() as f64)).abs() < 1e-12);
    }

    #[test]
    fn p_values_live_on_the_permutation_grid(pts in matrix(10, 1), n_perm in 1usize..60, seed in any::<u64>()) {
        let g = &pts * pts.transpose();
        let c = permutation_calibrate(&g, 5, n_perm, false, &RandomSource::new(seed)).unwrap();
        let scaled = c.p_value * n_perm as f64;
        prop_assert!((scaled - scaled.round()).abs() < 1e-9);
        prop_assert_eq!(c.permuted.len(), n_perm);
        let count = c.permuted.iter().filter(|&&t| t >= c.statistic).count();
        prop_assert!((c.p_value - count as f64 / n_perm as f64).abs() < 1e-12);
    }
}
