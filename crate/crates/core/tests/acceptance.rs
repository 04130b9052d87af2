//! Acceptance suite. Every test prints one `PASS`/`FAIL` line (straight to
//! stderr, so it shows up without `--nocapture`) and then asserts.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use mmdsel::bench::{fdp_ndp, run_power_experiment, synth_from, PowerConfig, SupportSelector, SynthMode, SynthSpec};
use mmdsel::gauss::{ccp_select, gauss_objective, stochastic_gradient, surrogate, GaussConfig};
use mmdsel::linear::{linear_coefficients, linear_select, LinearCoefficients};
use mmdsel::mmd::{concentration_epsilon, default_gamma, mmd_sq, ConcentrationInputs};
use mmdsel::quad::{
    approximation_gap, exact_select_bnb, greedy_select, local_search, relax_select, QuadProblem, RelaxConfig,
};
use mmdsel::spectra::{bregman, mirror_step, smd_run, SpectraPoint, StepRule};
use mmdsel::testing::{Selector, SelectorKind, TestConfig};
use mmdsel::trs::trs_max;
use mmdsel::{KernelSpec, RandomSource, SelectionVector, TwoSampleData};

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id:02} {name}: {tag} ({detail})");
    assert!(pass, "acceptance {id:02} {name} failed: {detail}");
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

fn symmetric(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let b = gaussian(rng, k, k);
    (&b + b.transpose()) * 0.5
}

fn subsets(dim: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, dim: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for k in start..dim {
            cur.push(k);
            rec(k + 1, dim, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, dim, d, &mut Vec::new(), &mut out);
    out
}

fn restrict(a: &DMatrix<f64>, t: &DVector<f64>, s: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_fn(s.len(), s.len(), |i, j| a[(s[i], s[j])]),
        DVector::from_fn(s.len(), |i, _| t[s[i]]),
    )
}

fn brute_force(a: &DMatrix<f64>, t: &DVector<f64>, d: usize) -> f64 {
    subsets(a.nrows(), d)
        .iter()
        .map(|s| {
            let (sa, st) = restrict(a, t, s);
            trs_max(&sa, &st, 1e-12).unwrap().value
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn type_one_error_control() {
    let synth = SynthSpec::new(20, 100, 100, SynthMode::Null, 20_240_601);
    let selectors = [SelectorKind::Linear, SelectorKind::QuadGreedy, SelectorKind::GaussCcp]
        .into_iter()
        .map(|k| Selector::new(k, 3))
        .collect();
    let cfg = PowerConfig {
        synth,
        selectors,
        trials: 500,
        test: TestConfig::default(),
        seed: 20_240_601,
    };
    let summary = run_power_experiment(&cfg).unwrap();
    let pass = summary.rows.iter().all(|r| (0.03..=0.07).contains(&r.rate));
    let detail = summary
        .rows
        .iter()
        .map(|r| format!("{} {:.3}", r.selector, r.rate))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(1, "type-I control", pass, detail);
}

#[test]
fn exact_search_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut ordered = true;
    for _ in 0..50 {
        let dim = rng.random_range(2..=12);
        let d = rng.random_range(1..=dim.min(4));
        let a = symmetric(&mut rng, dim);
        let t = DVector::from_fn(dim, |_, _| normal(&mut rng));
        let qp = QuadProblem::new(a.clone(), t.clone()).unwrap();
        let exact = exact_select_bnb(&qp, d, 1e-10).unwrap().value;
        let truth = brute_force(&a, &t, d);
        worst = worst.max((exact - truth).abs() / truth.abs().max(1.0));
        let greedy = greedy_select(&qp, d, 1e-10).unwrap();
        let local = local_search(&qp, d, &greedy.support, 100, 1e-10).unwrap();
        let slack = 1e-9 * (1.0 + exact.abs());
        ordered &= greedy.value <= local.value + slack && local.value <= exact + slack;
    }
    verdict(
        2,
        "exact search vs enumeration",
        worst <= 1e-8 && ordered,
        format!("max relative error {worst:.2e}, greedy <= local <= exact: {ordered}"),
    );
}

fn sphere_grid_max(a: &DMatrix<f64>, t: &DVector<f64>) -> f64 {
    let f = |z: &DVector<f64>| (z.transpose() * a * z)[(0, 0)] + t.dot(z);
    match a.nrows() {
        1 => (a[(0, 0)] + t[0]).max(a[(0, 0)] - t[0]),
        2 => {
            let at = |th: f64| f(&DVector::from_column_slice(&[th.cos(), th.sin()]));
            let n = 20_000;
            let h = std::f64::consts::TAU / n as f64;
            let mut best = (0..n).map(|i| (i as f64 * h, at(i as f64 * h))).max_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
            let mut step = h / 50.0;
            for _ in 0..4 {
                let c = best.0;
                for i in -50..=50 {
                    let th = c + i as f64 * step;
                    let v = at(th);
                    if v > best.1 {
                        best = (th, v);
                    }
                }
                step /= 50.0;
            }
            best.1
        }
        _ => {
            let at = |th: f64, ph: f64| f(&DVector::from_column_slice(&[th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]));
            let (nt, np) = (400, 800);
            let (ht, hp) = (std::f64::consts::PI / nt as f64, std::f64::consts::TAU / np as f64);
            let mut best = (0.0, 0.0, f64::NEG_INFINITY);
            for i in 0..=nt {
                for j in 0..np {
                    let (th, ph) = (i as f64 * ht, j as f64 * hp);
                    let v = at(th, ph);
                    if v > best.2 {
                        best = (th, ph, v);
                    }
                }
            }
            let (mut st, mut sp) = (ht, hp);
            for _ in 0..6 {
                let (c0, c1) = (best.0, best.1);
                for i in -20..=20 {
                    for j in -20..=20 {
                        let (th, ph) = (c0 + i as f64 * st / 10.0, c1 + j as f64 * sp / 10.0);
                        let v = at(th, ph);
                        if v > best.2 {
                            best = (th, ph, v);
                        }
                    }
                }
                st /= 5.0;
                sp /= 5.0;
            }
            best.2
        }
    }
}

#[test]
fn trust_region_certificates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut kkt_ok, mut grid_ok, mut hard_seen) = (true, true, 0);
    let mut worst_grid = 0.0f64;
    for case in 0..200 {
        let k = rng.random_range(1..=10);
        let a = symmetric(&mut rng, k);
        let mut t = DVector::from_fn(k, |_, _| normal(&mut rng));
        if case % 4 == 0 && k > 1 {
            let eig = a.clone().symmetric_eigen();
            let top = eig.eigenvalues.imax();
            let u = eig.eigenvectors.column(top).clone_owned();
            t -= &u * u.dot(&t);
            t *= 0.05;
        }
        let sol = trs_max(&a, &t, 1e-12).unwrap();
        if sol.hard_case {
            hard_seen += 1;
        }
        let lmax = a.clone().symmetric_eigen().eigenvalues.max();
        let resid = ((DMatrix::identity(k, k) * sol.mu - &a) * &sol.z * 2.0 - &t).norm();
        let value = (sol.z.transpose() * &a * &sol.z)[(0, 0)] + t.dot(&sol.z);
        kkt_ok &= sol.mu >= lmax - 1e-7
            && resid <= 1e-6 * (1.0 + t.norm())
            && (sol.z.norm() - 1.0).abs() <= 1e-9
            && (value - sol.value).abs() <= 1e-9 * (1.0 + value.abs());
        if k <= 3 {
            let g = sphere_grid_max(&a, &t);
            worst_grid = worst_grid.max((g - sol.value).abs());
            grid_ok &= (g - sol.value).abs() <= 1e-4;
        }
    }
    verdict(
        3,
        "trust-region subproblem",
        kkt_ok && grid_ok,
        format!("KKT certificates ok: {kkt_ok}, max grid gap {worst_grid:.2e}, hard cases {hard_seen}"),
    );
}

#[test]
fn relaxation_sandwich() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = RelaxConfig::default();
    let (mut certified, mut passed) = (0, 0);
    for _ in 0..100 {
        let dim = rng.random_range(2..=10);
        let d = rng.random_range(1..=dim.min(4));
        let r = rng.random_range(1..=dim);
        let b = gaussian(&mut rng, dim, r);
        let a = &b * b.transpose() / r as f64;
        let t = DVector::from_fn(dim, |_, _| normal(&mut rng).abs() * 0.5);
        let qp = QuadProblem::new(a, t.clone()).unwrap();
        let exact = exact_select_bnb(&qp, d, 1e-10).unwrap().value;
        let (state, report) = relax_select(&qp, d, &cfg).unwrap();
        if state.certified {
            certified += 1;
            let check = approximation_gap(report.upper_bound.unwrap(), exact, &t, dim, d, 1e-5);
            if check.pass {
                passed += 1;
            }
        }
    }
    verdict(
        4,
        "relaxation sandwich",
        passed == certified && certified >= 90,
        format!("{passed}/{certified} certified runs inside the bounds, {certified}/100 certified"),
    );
}

#[test]
fn linear_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut same_support, mut worst) = (true, 0.0f64);
    for _ in 0..500 {
        let dim = rng.random_range(1..=12);
        let d = rng.random_range(1..=dim);
        let a: Vec<f64> = (0..dim).map(|_| normal(&mut rng).abs()).collect();
        let sel = linear_select(&LinearCoefficients::new(a.clone()).unwrap(), d).unwrap();
        let (best, value) = subsets(dim, d)
            .into_iter()
            .map(|s| {
                let v = s.iter().map(|&k| a[k] * a[k]).sum::<f64>().sqrt();
                (s, v)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        same_support &= sel.selection.support() == best.as_slice();
        let mut sq: Vec<f64> = a.iter().map(|v| v * v).collect();
        sq.sort_by(|x, y| y.total_cmp(x));
        let closed = sq[..d].iter().sum::<f64>().sqrt();
        let achieved: f64 = a.iter().zip(sel.selection.z()).map(|(x, z)| x * z).sum();
        worst = worst.max((sel.objective - closed).abs()).max((achieved - value).abs());
    }
    verdict(
        5,
        "closed-form linear selection",
        same_support && worst <= 1e-12,
        format!("supports match enumeration: {same_support}, max objective error {worst:.2e}"),
    );
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> SpectraPoint {
    let b = gaussian(rng, dim, dim);
    let z = &b * b.transpose() + DMatrix::identity(dim, dim) * 0.1;
    let t = z.trace();
    SpectraPoint::new(z / t, 1.0).unwrap()
}

fn shifted_data(rng: &mut ChaCha8Rng, n: usize, m: usize, dim: usize) -> TwoSampleData {
    let x = gaussian(rng, n, dim);
    let y = gaussian(rng, m, dim).add_scalar(0.4);
    TwoSampleData::new(x, y).unwrap()
}

#[test]
fn gaussian_lifting_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut lift_err = 0.0f64;
    for case in 0..100 {
        let dim = 2 + case % 5;
        let data = shifted_data(&mut rng, 6 + case % 3, 5 + case % 4, dim);
        let v = DVector::from_fn(dim, |_, _| normal(&mut rng)).normalize();
        let z = SelectionVector::new(v.iter().copied().collect(), dim).unwrap();
        let gamma = 0.3 + 0.02 * case as f64;
        let p = SpectraPoint::new(&v * v.transpose(), 1.0).unwrap();
        let f = gauss_objective(&p, &data, gamma).unwrap();
        let s = mmd_sq(&KernelSpec::Gaussian { gamma }, &z, &data).unwrap();
        lift_err = lift_err.max((f + s).abs());
    }

    let mut maj_err = 0.0f64;
    let data = shifted_data(&mut rng, 7, 6, 4);
    for _ in 0..100 {
        let z = random_point(&mut rng, 4);
        let z0 = random_point(&mut rng, 4);
        let f = gauss_objective(&z, &data, 0.9).unwrap();
        let f0 = gauss_objective(&z0, &data, 0.9).unwrap();
        maj_err = maj_err
            .max((surrogate(&z0, &z0, &data, 0.9).unwrap() - f0).abs())
            .max(f - surrogate(&z, &z0, &data, 0.9).unwrap());
    }

    let mut fd_err = 0.0f64;
    for _ in 0..5 {
        let data = shifted_data(&mut rng, 4, 4, 4);
        let z = random_point(&mut rng, 4);
        let z0 = random_point(&mut rng, 4);
        let g = stochastic_gradient(&z, &z0, &data, 0.7, 0.0, 16, &mut rng).unwrap();
        let h = 1e-5;
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for i in 0..4 {
            for j in i..4 {
                let mut e = DMatrix::zeros(4, 4);
                if i == j {
                    if i == 0 {
                        continue;
                    }
                    e[(i, i)] = 1.0;
                    e[(0, 0)] = -1.0;
                } else {
                    e[(i, j)] = 1.0;
                    e[(j, i)] = 1.0;
                }
                let at = |s: f64| surrogate(&SpectraPoint::new(z.z() + &e * s, 1.0).unwrap(), &z0, &data, 0.7).unwrap();
                numeric.push((at(h) - at(-h)) / (2.0 * h));
                analytic.push(g.dot(&e));
            }
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        fd_err = fd_err.max(diff / norm);
    }
    verdict(
        6,
        "Gaussian lifting identities",
        lift_err <= 1e-10 && maj_err <= 1e-10 && fd_err < 1e-5,
        format!("lift {lift_err:.1e}, majorization/anchoring {maj_err:.1e}, gradient vs differences {fd_err:.1e}"),
    );
}

#[test]
fn ccp_descent_and_recovery() {
    let mut monotone = 0;
    for seed in 0..10u64 {
        let spec = SynthSpec::new(4, 100, 100, SynthMode::Alternative, seed);
        let src = RandomSource::new(seed);
        let (data, _) = synth_from(&spec, &src.derive_stream(0)).unwrap();
        let mut cfg = GaussConfig::new(default_gamma(&data).unwrap());
        cfg.rng = src.derive_stream(1);
        let out = ccp_select(&data, &cfg, 3).unwrap();
        let ok = out
            .trajectory
            .windows(2)
            .all(|w| w[1].total() <= w[0].total() + 10.0 * w[1].gap_estimate);
        if ok {
            monotone += 1;
        }
    }

    let selector = Selector::new(SelectorKind::GaussCcp, 3);
    let mut full = 0;
    for seed in 0..20u64 {
        let src = RandomSource::new(seed);
        let (data, truth) = synth_from(&SynthSpec::new(10, 500, 500, SynthMode::Alternative, seed), &src.derive_stream(0)).unwrap();
        let sel = selector.select(&data, &src.derive_stream(1)).unwrap();
        if fdp_ndp(&sel, &truth).unwrap().ndp == 0.0 {
            full += 1;
        }
    }
    verdict(
        7,
        "CCP descent and support recovery",
        monotone == 10 && full >= 16,
        format!("non-increasing trajectories {monotone}/10, NDP = 0 in {full}/20 runs"),
    );
}

#[test]
fn quadratic_beats_linear_on_covariance_shift() {
    let synth = SynthSpec::new(10, 100, 100, SynthMode::CovarianceOnly, 808);
    let cfg = PowerConfig {
        synth,
        selectors: vec![Selector::new(SelectorKind::Linear, 3), Selector::new(SelectorKind::QuadGreedy, 3)],
        trials: 200,
        test: TestConfig::default(),
        seed: 808,
    };
    let summary = run_power_experiment(&cfg).unwrap();
    let (lin, quad) = (summary.rows[0].rate, summary.rows[1].rate);
    let alpha = cfg.test.alpha;
    verdict(
        8,
        "power ordering under covariance shift",
        quad - lin >= 0.2 && (alpha - 0.03..=alpha + 0.07).contains(&lin),
        format!("linear {lin:.3}, quad-greedy {quad:.3}"),
    );
}

#[test]
fn null_statistic_decays_with_sample_size() {
    let sizes = [50usize, 100, 200, 400];
    let medians: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let stats = (0..50u64)
                .map(|trial| {
                    let spec = SynthSpec::new(10, n, n, SynthMode::Null, trial);
                    let (data, _) = synth_from(&spec, &RandomSource::new(9_000 + trial).derive_stream(n as u64)).unwrap();
                    let sel = linear_select(&linear_coefficients(&data), 3).unwrap();
                    mmd_sq(&KernelSpec::Linear, &sel.selection, &data).unwrap()
                })
                .collect();
            median(stats)
        })
        .collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    verdict(
        9,
        "null statistic decay",
        decreasing,
        format!("medians {}", medians.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(" > ")),
    );
}

#[test]
fn concentration_constant() {
    let eps = |m, n, k, eta| concentration_epsilon(&ConcentrationInputs::new(m, n, k, eta).unwrap());
    let value = eps(100, 100, 1.0, 0.05);
    let grid_m = [50, 100, 200, 400].map(|m| eps(m, 100, 1.0, 0.05));
    let grid_n = [50, 100, 200, 400].map(|n| eps(100, n, 1.0, 0.05));
    let grid_k = [0.5, 1.0, 2.0, 4.0].map(|k| eps(100, 100, k, 0.05));
    let grid_eta = [0.2, 0.1, 0.05, 0.01].map(|e| eps(100, 100, 1.0, e));
    let monotone = grid_m.windows(2).all(|w| w[1] < w[0])
        && grid_n.windows(2).all(|w| w[1] < w[0])
        && grid_k.windows(2).all(|w| w[1] > w[0])
        && grid_eta.windows(2).all(|w| w[1] > w[0]);
    verdict(
        10,
        "concentration constant",
        (value - 0.78414).abs() <= 1e-5 && monotone,
        format!("epsilon(100, 100, 1, 0.05) = {value:.6} against 0.78414, monotone: {monotone}"),
    );
}

#[test]
fn spectrahedron_engine() {
    let c = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0]));
    let p0 = SpectraPoint::uniform(2, 1.0).unwrap();
    let mut feasible = true;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let out = smd_run(
        |p, _| {
            feasible &= SpectraPoint::new(p.z().clone(), 1.0).is_ok();
            Ok(c.clone())
        },
        &p0,
        2000,
        StepRule::entropic(2, 1.0, Some(1.0)),
        &mut rng,
    )
    .unwrap();
    let off_target = out.average.z()[(0, 0)];
    feasible &= SpectraPoint::new(out.average.z().clone(), 1.0).is_ok();

    let noisy_gap = |t_in: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = smd_run(
            |_, r| {
                let e = 0.3 * Distribution::<f64>::sample(&StandardNormal, r);
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0 + e, -e])))
            },
            &p0,
            t_in,
            StepRule::entropic(2, 1.0, Some(1.5)),
            &mut rng,
        )
        .unwrap();
        out.average.z()[(0, 0)]
    };
    let gaps_short = median((0..10).map(|s| noisy_gap(500, s)).collect());
    let gaps_long = median((0..10).map(|s| noisy_gap(1000, s)).collect());

    let half = SpectraPoint::uniform(2, 1.0).unwrap();
    let step = 3f64.ln();
    let moved = mirror_step(&half, &DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0])), step).unwrap();
    let step_err = (moved.z()[(0, 0)] - 0.25).abs().max((moved.z()[(1, 1)] - 0.75).abs());
    let still = mirror_step(&half, &DMatrix::zeros(2, 2), 0.7).unwrap();
    let still_err = (still.z() - half.z()).amax();
    let target = SpectraPoint::new(DMatrix::from_diagonal(&DVector::from_column_slice(&[0.25, 0.75])), 1.0).unwrap();
    let v = bregman(&half, &target).unwrap();
    let v_expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    let bregman_err = (v - v_expected).abs().max(bregman(&half, &half).unwrap().abs());

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z = random_point(&mut rng, 4);
    let g = symmetric(&mut rng, 4);
    let q = gaussian(&mut rng, 4, 4).qr().q();
    let rotated = mirror_step(&SpectraPoint::new(&q * z.z() * q.transpose(), 1.0).unwrap(), &(&q * &g * q.transpose()), 0.4).unwrap();
    let direct = mirror_step(&z, &g, 0.4).unwrap();
    let equiv_err = (rotated.z() - &q * direct.z() * q.transpose()).amax();

    let units = step_err <= 1e-12 && still_err <= 1e-12 && bregman_err <= 1e-12 && (v - 0.14384).abs() <= 1e-5 && equiv_err <= 1e-8;
    verdict(
        11,
        "spectrahedron engine",
        off_target < 0.05 && feasible && gaps_long <= gaps_short && units,
        format!(
            "off-target mass {off_target:.4}, iterates feasible: {feasible}, median gap {gaps_short:.4} -> {gaps_long:.4} when doubling, unit examples ok: {units}"
        ),
    );
}
