//! The end-to-end permutation test: learn a direction on a training split,
//! compute the statistic on the held-out split and calibrate it by
//! reshuffling the held-out rows.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_train_test, SelectionVector, TwoSampleData};
use crate::error::{invalid, Result};
use crate::gauss::{ccp_select, lambda_grid_select, CcpRecord, GaussConfig};
use crate::linear::{linear_coefficients, linear_select};
use crate::mmd::{default_gamma, default_quadratic_c, gram_matrix, KernelSpec};
use crate::quad::{
    assemble_quadratic, exact_select_bnb, greedy_select, local_search, prescreen_then_relax, relax_select, QuadSolveReport,
    RelaxConfig,
};
use crate::rng::RandomSource;

/// Sweeps allowed to the 1-swap search.
const LOCAL_SWEEPS: usize = 100;
const SOLVER_TOL: f64 = 1e-9;

/// Named selection solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorKind {
    Linear,
    QuadGreedy,
    QuadLocal,
    QuadExact,
    QuadRelax,
    GaussCcp,
}

/// Kernel family a selector is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Linear,
    Quadratic,
    Gaussian,
}

impl KernelFamily {
    pub fn of(spec: &KernelSpec) -> Self {
        match spec {
            KernelSpec::Linear => KernelFamily::Linear,
            KernelSpec::Quadratic { .. } => KernelFamily::Quadratic,
            KernelSpec::Gaussian { .. } => KernelFamily::Gaussian,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Linear => "linear",
            KernelFamily::Quadratic => "quadratic",
            KernelFamily::Gaussian => "gaussian",
        }
    }
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 6] = [
        SelectorKind::Linear,
        SelectorKind::QuadGreedy,
        SelectorKind::QuadLocal,
        SelectorKind::QuadExact,
        SelectorKind::QuadRelax,
        SelectorKind::GaussCcp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SelectorKind::Linear => "linear",
            SelectorKind::QuadGreedy => "quad-greedy",
            SelectorKind::QuadLocal => "quad-local",
            SelectorKind::QuadExact => "quad-exact",
            SelectorKind::QuadRelax => "quad-relax",
            SelectorKind::GaussCcp => "gauss-ccp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            SelectorKind::Linear => KernelFamily::Linear,
            SelectorKind::GaussCcp => KernelFamily::Gaussian,
            _ => KernelFamily::Quadratic,
        }
    }
}

/// A kernel whose bandwidth may be left to the default rule, evaluated on
/// the training split only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelChoice {
    Linear,
    Quadratic(Option<f64>),
    Gaussian(Option<f64>),
}

impl KernelChoice {
    pub fn family(&self) -> KernelFamily {
        match self {
            KernelChoice::Linear => KernelFamily::Linear,
            KernelChoice::Quadratic(_) => KernelFamily::Quadratic,
            KernelChoice::Gaussian(_) => KernelFamily::Gaussian,
        }
    }

    /// Default-bandwidth choice for a family.
    pub fn auto(family: KernelFamily) -> Self {
        match family {
            KernelFamily::Linear => KernelChoice::Linear,
            KernelFamily::Quadratic => KernelChoice::Quadratic(None),
            KernelFamily::Gaussian => KernelChoice::Gaussian(None),
        }
    }

    pub fn resolve(&self, train: &TwoSampleData) -> Result<KernelSpec> {
        let spec = match *self {
            KernelChoice::Linear => KernelSpec::Linear,
            KernelChoice::Quadratic(c) => KernelSpec::Quadratic {
                c: match c {
                    Some(c) => c,
                    None => default_quadratic_c(train)?,
                },
            },
            KernelChoice::Gaussian(g) => KernelSpec::Gaussian {
                gamma: match g {
                    Some(g) => g,
                    None => default_gamma(train)?,
                },
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<KernelSpec> for KernelChoice {
    fn from(spec: KernelSpec) -> Self {
        match spec {
            KernelSpec::Linear => KernelChoice::Linear,
            KernelSpec::Quadratic { c } => KernelChoice::Quadratic(Some(c)),
            KernelSpec::Gaussian { gamma } => KernelChoice::Gaussian(Some(gamma)),
        }
    }
}

/// Settings of the convex-concave selector other than the bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussSettings {
    pub lambda: f64,
    pub t_out: usize,
    pub t_in: usize,
    pub batch: usize,
    /// When set, `λ` is chosen on an inner half-split of the training data.
    pub lambda_grid: Option<Vec<f64>>,
}

impl Default for GaussSettings {
    fn default() -> Self {
        let base = GaussConfig::new(1.0);
        Self {
            lambda: base.lambda,
            t_out: base.t_out,
            t_in: base.t_in,
            batch: base.batch,
            lambda_grid: None,
        }
    }
}

/// A named solver with its budget and options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selector {
    pub kind: SelectorKind,
    pub d: usize,
    pub relax: RelaxConfig,
    /// Greedy pre-screen size for the relaxation; used when `D` exceeds it.
    pub prescreen: Option<usize>,
    pub gauss: GaussSettings,
}

impl Selector {
    pub fn new(kind: SelectorKind, d: usize) -> Self {
        Self {
            kind,
            d,
            relax: RelaxConfig::default(),
            prescreen: None,
            gauss: GaussSettings::default(),
        }
    }

    /// Fits a direction on `train` with the resolved kernel.
    pub fn train(&self, kernel: &KernelSpec, train: &TwoSampleData, rng: &RandomSource) -> Result<Trained> {
        if KernelFamily::of(kernel) != self.kind.family() {
            return invalid(format!(
                "solver {} needs a {} kernel, got {}",
                self.kind.name(),
                self.kind.family().name(),
                kernel.name()
            ));
        }
        match (self.kind, *kernel) {
            (SelectorKind::Linear, _) => {
                let sel = linear_select(&linear_coefficients(train), self.d)?;
                Ok(Trained {
                    selection: sel.selection,
                    objective: sel.objective,
                    diagnostics: Diagnostics {
                        method: self.kind.name().into(),
                        no_signal: sel.no_signal,
                        ..Diagnostics::default()
                    },
                })
            }
            (SelectorKind::GaussCcp, KernelSpec::Gaussian { gamma }) => self.train_gauss(gamma, train, rng),
            (_, KernelSpec::Quadratic { c }) => {
                let qp = assemble_quadratic(train, c)?;
                let report = match self.kind {
                    SelectorKind::QuadGreedy => greedy_select(&qp, self.d, SOLVER_TOL)?,
                    SelectorKind::QuadLocal => {
                        let g = greedy_select(&qp, self.d, SOLVER_TOL)?;
                        local_search(&qp, self.d, &g.support, LOCAL_SWEEPS, SOLVER_TOL)?
                    }
                    SelectorKind::QuadExact => exact_select_bnb(&qp, self.d, SOLVER_TOL)?,
                    _ => match self.prescreen {
                        Some(p) if p < qp.dim() => prescreen_then_relax(&qp, self.d, p.max(self.d), &self.relax)?.1,
                        _ => relax_select(&qp, self.d, &self.relax)?.1,
                    },
                };
                Ok(Trained::from_quad(self.kind, report))
            }
            _ => unreachable!("kernel family checked above"),
        }
    }

    fn train_gauss(&self, gamma: f64, train: &TwoSampleData, rng: &RandomSource) -> Result<Trained> {
        let g = &self.gauss;
        let mut cfg = GaussConfig {
            gamma,
            lambda: g.lambda,
            t_out: g.t_out,
            t_in: g.t_in,
            batch: g.batch,
            lambda_grid: g.lambda_grid.clone().unwrap_or_default(),
            rng: rng.derive_stream(0),
        };
        if g.lambda_grid.is_some() {
            let (inner, val) = split_train_test(train, 0.5, &rng.derive_stream(1))?;
            cfg.lambda = lambda_grid_select(&inner, &val, &cfg, self.d)?.lambda;
        }
        let out = ccp_select(train, &cfg, self.d)?;
        let objective = -out.trajectory.last().map(|r| r.objective).unwrap_or(0.0);
        Ok(Trained {
            selection: out.selection,
            objective,
            diagnostics: Diagnostics {
                method: self.kind.name().into(),
                no_signal: out.no_signal,
                lambda: Some(cfg.lambda),
                trajectory: Some(out.trajectory),
                ..Diagnostics::default()
            },
        })
    }
}

/// Solver-specific information attached to a trained direction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: String,
    pub upper_bound: Option<f64>,
    pub node_count: Option<u64>,
    pub bound_certified: Option<bool>,
    pub lambda: Option<f64>,
    pub no_signal: bool,
    #[serde(skip)]
    pub trajectory: Option<Vec<CcpRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub selection: SelectionVector,
    /// Training objective of the solver: `aᵀz` for the linear kernel, the
    /// quadratic form for the quadratic kernel, `-F(Z)` for the lifted
    /// Gaussian problem.
    pub objective: f64,
    pub diagnostics: Diagnostics,
}

impl Trained {
    fn from_quad(kind: SelectorKind, r: QuadSolveReport) -> Self {
        Self {
            selection: r.z,
            objective: r.value,
            diagnostics: Diagnostics {
                method: kind.name().into(),
                upper_bound: r.upper_bound,
                node_count: r.node_count,
                bound_certified: r.bound_certified,
                ..Diagnostics::default()
            },
        }
    }
}

/// Calibration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub n_perm: usize,
    pub alpha: f64,
    pub train_fraction: f64,
    /// Use `(1 + #{T_t ≥ T}) / (1 + N_p)` instead of `#{T_t ≥ T} / N_p`.
    pub corrected: bool,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            n_perm: 200,
            alpha: 0.05,
            train_fraction: 0.5,
            corrected: false,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_perm == 0 {
            return invalid("need at least one permutation");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid("alpha must lie in (0, 1)");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return invalid("train fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Statistic on the original labelling and under each reshuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub statistic: f64,
    pub permuted: Vec<f64>,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub statistic: f64,
    pub permuted: Vec<f64>,
    pub p_value: f64,
    pub alpha: f64,
    /// `p_value < alpha`.
    pub reject: bool,
    pub corrected: bool,
    pub selection: SelectionVector,
    pub kernel: KernelSpec,
    pub seed: RandomSource,
    pub train_sizes: (usize, usize),
    pub test_sizes: (usize, usize),
    pub training_objective: f64,
    pub diagnostics: Diagnostics,
}

/// Squared MMD of the labelling that puts `order[..n_x]` in the first group.
fn gram_statistic(gram: &DMatrix<f64>, order: &[usize], n_x: usize) -> f64 {
    let (xs, ys) = order.split_at(n_x);
    let block = |a: &[usize], b: &[usize]| -> f64 {
        let mut s = 0.0;
        for &i in a {
            for &j in b {
                s += gram[(i, j)];
            }
        }
        s
    };
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    block(xs, xs) / (n * n) + block(ys, ys) / (m * m) - 2.0 * block(xs, ys) / (n * m)
}

/// Permutation calibration on a pooled Gram matrix whose first `n_x` rows
/// are the first group. Round `r` shuffles with stream `r` of `rng`.
pub fn permutation_calibrate(
    gram: &DMatrix<f64>,
    n_x: usize,
    n_perm: usize,
    corrected: bool,
    rng: &RandomSource,
) -> Result<Calibration> {
    let total = gram.nrows();
    if gram.ncols() != total {
        return invalid("Gram matrix must be square");
    }
    if n_x == 0 || n_x >= total {
        return invalid("both groups need at least one row");
    }
    if n_perm == 0 {
        return invalid("need at least one permutation");
    }
    let identity: Vec<usize> = (0..total).collect();
    let statistic = gram_statistic(gram, &identity, n_x);
    let permuted: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut order = identity.clone();
            order.shuffle(&mut rng.derive_stream(r as u64).rng());
            gram_statistic(gram, &order, n_x)
        })
        .collect();
    let exceed = permuted.iter().filter(|&&t| t >= statistic).count();
    let p_value = if corrected {
        (1 + exceed) as f64 / (1 + n_perm) as f64
    } else {
        exceed as f64 / n_perm as f64
    };
    Ok(Calibration {
        statistic,
        permuted,
        p_value,
    })
}

/// Split, train, then calibrate on the test split. Stream 0 of `rng` drives
/// the split, stream 1 the solver and stream 2 the permutations.
pub fn permutation_test(
    data: &TwoSampleData,
    kernel: &KernelChoice,
    selector: &Selector,
    cfg: &TestConfig,
    rng: &RandomSource,
) -> Result<PermutationReport> {
    cfg.validate()?;
    let (train, test) = split_train_test(data, cfg.train_fraction, &rng.derive_stream(0))?;
    let spec = kernel.resolve(&train)?;
    let trained = selector.train(&spec, &train, &rng.derive_stream(1))?;
    let gram = gram_matrix(&spec, &trained.selection, &test.pooled())?;
    let cal = permutation_calibrate(&gram, test.n(), cfg.n_perm, cfg.corrected, &rng.derive_stream(2))?;
    Ok(PermutationReport {
        statistic: cal.statistic,
        permuted: cal.permuted,
        p_value: cal.p_value,
        alpha: cfg.alpha,
        reject: cal.p_value < cfg.alpha,
        corrected: cfg.corrected,
        selection: trained.selection,
        kernel: spec,
        seed: *rng,
        train_sizes: (train.n(), train.m()),
        test_sizes: (test.n(), test.m()),
        training_objective: trained.objective,
        diagnostics: trained.diagnostics,
    })
}
