//! Gaussian-kernel selection through a matrix lifting `Z ≈ zzᵀ`.
//!
//! The objective `F(Z)` is minus the squared MMD written as a function of
//! `Z` on the spectrahedron. It is a difference of convex functions; the
//! convex-concave procedure linearizes the within-group terms and solves each
//! convex model with stochastic mirror descent.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SelectionVector, TwoSampleData};
use crate::error::{invalid, Error, Result};
use crate::linear::top_d_indices;
use crate::mmd::{mmd_sq, KernelSpec};
use crate::rng::RandomSource;
use crate::spectra::{smd_run, SpectraPoint, StepRule};
use crate::trs::sorted_eigen;

/// Values of `|F|` below this are reported as carrying no signal.
pub const NO_SIGNAL_TOL: f64 = 1e-6;

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.0, 0.01, 0.05, 0.1, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussConfig {
    pub gamma: f64,
    /// Weight of the entrywise `‖Z‖₁` penalty.
    pub lambda: f64,
    pub t_out: usize,
    pub t_in: usize,
    /// Cross pairs sampled per gradient; `n·m` or more means exact.
    pub batch: usize,
    pub lambda_grid: Vec<f64>,
    pub rng: RandomSource,
}

impl GaussConfig {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            lambda: 0.0,
            t_out: 10,
            t_in: 100,
            batch: 256,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            rng: RandomSource::new(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return invalid("gamma must be positive and finite");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return invalid("lambda must be non-negative and finite");
        }
        if self.t_out == 0 {
            return invalid("t_out must be at least 1");
        }
        if self.batch == 0 {
            return invalid("batch must be at least 1");
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return invalid("lambda grid entries must be non-negative and finite");
        }
        Ok(())
    }
}

/// Pair matrices `M_{u,v} = (u - v)(u - v)ᵀ / (2γ)`, kept implicitly as the
/// sample rows scaled by `1/√(2γ)`.
#[derive(Debug, Clone)]
pub struct PairMatrix {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    gamma: f64,
}

/// Which pair family a descriptor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    XY,
    XX,
    YY,
}

impl PairMatrix {
    pub fn new(data: &TwoSampleData, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return invalid("gamma must be positive and finite");
        }
        let s = 1.0 / (2.0 * gamma).sqrt();
        Ok(Self {
            x: data.x() * s,
            y: data.y() * s,
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.y.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn groups(&self, kind: PairKind) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match kind {
            PairKind::XY => (&self.x, &self.y),
            PairKind::XX => (&self.x, &self.x),
            PairKind::YY => (&self.y, &self.y),
        }
    }

    /// Scaled difference `(u_i - v_j)/√(2γ)`.
    pub fn difference(&self, kind: PairKind, i: usize, j: usize) -> nalgebra::DVector<f64> {
        let (a, b) = self.groups(kind);
        (a.row(i) - b.row(j)).transpose()
    }

    /// The materialized `M_{u_i, v_j}`.
    pub fn matrix(&self, kind: PairKind, i: usize, j: usize) -> DMatrix<f64> {
        let d = self.difference(kind, i, j);
        &d * d.transpose()
    }

    /// Kernel weights `exp(-⟨Z, M_ij⟩)` for every pair of the family.
    fn weights(&self, kind: PairKind, z: &DMatrix<f64>) -> DMatrix<f64> {
        let (a, b) = self.groups(kind);
        let az = a * z;
        let bz = b * z;
        let qa: Vec<f64> = (0..a.nrows()).map(|i| az.row(i).dot(&a.row(i))).collect();
        let qb: Vec<f64> = (0..b.nrows()).map(|j| bz.row(j).dot(&b.row(j))).collect();
        let cross = az * b.transpose();
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            let e = (qa[i] + qb[j] - 2.0 * cross[(i, j)]).max(0.0);
            (-e).exp()
        })
    }

    /// `Σ_ij w_ij M_ij`.
    fn weighted_sum(&self, kind: PairKind, w: &DMatrix<f64>) -> DMatrix<f64> {
        let (a, b) = self.groups(kind);
        let ra: Vec<f64> = (0..w.nrows()).map(|i| w.row(i).sum()).collect();
        let cb: Vec<f64> = (0..w.ncols()).map(|j| w.column(j).sum()).collect();
        let mut da = a.clone();
        for (i, r) in ra.iter().enumerate() {
            da.row_mut(i).scale_mut(*r);
        }
        let mut db = b.clone();
        for (j, c) in cb.iter().enumerate() {
            db.row_mut(j).scale_mut(*c);
        }
        let awb = a.transpose() * w * b;
        let s = a.transpose() * da + b.transpose() * db - &awb - awb.transpose();
        (&s + s.transpose()) * 0.5
    }

    fn objective(&self, z: &DMatrix<f64>) -> f64 {
        let (n, m) = (self.n() as f64, self.m() as f64);
        let sxy = self.weights(PairKind::XY, z).sum();
        let sxx = self.weights(PairKind::XX, z).sum();
        let syy = self.weights(PairKind::YY, z).sum();
        2.0 * sxy / (n * m) - sxx / (n * n) - syy / (m * m)
    }

    /// Within-group terms linearized at `z0`.
    fn linearize(&self, z0: &DMatrix<f64>) -> Linearization {
        let (n, m) = (self.n() as f64, self.m() as f64);
        let wxx = self.weights(PairKind::XX, z0);
        let wyy = self.weights(PairKind::YY, z0);
        Linearization {
            z0: z0.clone(),
            value: -wxx.sum() / (n * n) - wyy.sum() / (m * m),
            grad: self.weighted_sum(PairKind::XX, &wxx) / (n * n) + self.weighted_sum(PairKind::YY, &wyy) / (m * m),
        }
    }

    fn surrogate(&self, lin: &Linearization, z: &DMatrix<f64>) -> f64 {
        let (n, m) = (self.n() as f64, self.m() as f64);
        let sxy = self.weights(PairKind::XY, z).sum();
        2.0 * sxy / (n * m) + lin.value + lin.grad.dot(&(z - &lin.z0))
    }

    fn gradient<R: Rng + ?Sized>(
        &self,
        lin: &Linearization,
        z: &DMatrix<f64>,
        lambda: f64,
        batch: usize,
        rng: &mut R,
    ) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let total = n * m;
        let cross = if batch >= total {
            self.weighted_sum(PairKind::XY, &self.weights(PairKind::XY, z)) * (2.0 / total as f64)
        } else {
            let picks = index::sample(rng, total, batch);
            let diffs = DMatrix::from_fn(batch, self.dim(), |r, c| {
                let k = picks.index(r);
                self.x[(k / m, c)] - self.y[(k % m, c)]
            });
            let dz = &diffs * z;
            let mut weighted = diffs.clone();
            for r in 0..batch {
                let e = dz.row(r).dot(&diffs.row(r)).max(0.0);
                weighted.row_mut(r).scale_mut((-e).exp());
            }
            let s = diffs.transpose() * weighted;
            (&s + s.transpose()) * (1.0 / batch as f64)
        };
        let mut g = &lin.grad - cross;
        if lambda > 0.0 {
            g += z.map(sign) * lambda;
        }
        g
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Linearization {
    z0: DMatrix<f64>,
    value: f64,
    grad: DMatrix<f64>,
}

fn check_point(z: &SpectraPoint, pairs: &PairMatrix) -> Result<()> {
    if z.dim() != pairs.dim() {
        return Err(Error::DimensionMismatch {
            context: "lifted matrix vs. data columns".into(),
            expected: pairs.dim(),
            found: z.dim(),
        });
    }
    Ok(())
}

/// `F(Z) = 2/(nm) Σ e^{-⟨Z,M_xy⟩} - 1/n² Σ e^{-⟨Z,M_xx'⟩} - 1/m² Σ e^{-⟨Z,M_yy'⟩}`.
pub fn gauss_objective(z: &SpectraPoint, data: &TwoSampleData, gamma: f64) -> Result<f64> {
    let pairs = PairMatrix::new(data, gamma)?;
    check_point(z, &pairs)?;
    Ok(pairs.objective(z.z()))
}

/// Convex model of `F` at `z0`: the cross term is kept, the within-group
/// exponentials are replaced by their tangents at `z0`.
pub fn surrogate(z: &SpectraPoint, z0: &SpectraPoint, data: &TwoSampleData, gamma: f64) -> Result<f64> {
    let pairs = PairMatrix::new(data, gamma)?;
    check_point(z, &pairs)?;
    check_point(z0, &pairs)?;
    let lin = pairs.linearize(z0.z());
    Ok(pairs.surrogate(&lin, z.z()))
}

/// Unbiased estimate of a subgradient of `F̂(·; z0) + λ‖·‖₁` at `z`. The
/// cross term averages `batch` pairs drawn without replacement; the
/// subgradient of `|0|` is taken as 0.
pub fn stochastic_gradient<R: Rng + ?Sized>(
    z: &SpectraPoint,
    z0: &SpectraPoint,
    data: &TwoSampleData,
    gamma: f64,
    lambda: f64,
    batch: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let pairs = PairMatrix::new(data, gamma)?;
    check_point(z, &pairs)?;
    check_point(z0, &pairs)?;
    if batch == 0 || batch > pairs.n() * pairs.m() {
        return invalid(format!("batch must lie in 1..={}", pairs.n() * pairs.m()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid("lambda must be non-negative and finite");
    }
    let lin = pairs.linearize(z0.z());
    Ok(pairs.gradient(&lin, z.z(), lambda, batch, rng))
}

fn entry_l1(z: &DMatrix<f64>) -> f64 {
    z.iter().map(|v| v.abs()).sum()
}

/// One outer iteration of the convex-concave procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpRecord {
    pub iteration: usize,
    /// `F(Z)`.
    pub objective: f64,
    /// `λ‖Z‖₁`.
    pub penalty: f64,
    pub l1_norm: f64,
    pub leading_eigenvalue: f64,
    /// `M·√(4 ln D / T_in)` for the inner run that produced this iterate;
    /// zero for the starting point.
    pub gap_estimate: f64,
}

impl CcpRecord {
    pub fn total(&self) -> f64 {
        self.objective + self.penalty
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpOutcome {
    pub selection: SelectionVector,
    pub trajectory: Vec<CcpRecord>,
    pub z: SpectraPoint,
    /// `|F(Z)| < NO_SIGNAL_TOL` at the final iterate.
    pub no_signal: bool,
}

fn record(pairs: &PairMatrix, z: &SpectraPoint, lambda: f64, iteration: usize, gap: f64) -> Result<CcpRecord> {
    let l1 = entry_l1(z.z());
    let (vals, _) = sorted_eigen(z.z().clone(), "trajectory eigenvalue")?;
    Ok(CcpRecord {
        iteration,
        objective: pairs.objective(z.z()),
        penalty: lambda * l1,
        l1_norm: l1,
        leading_eigenvalue: vals[0],
        gap_estimate: gap,
    })
}

/// Convex-concave procedure from `Z₁ = I/D`: `t_out` linearizations, each
/// solved by `t_in` mirror-descent steps, followed by extraction. With
/// `t_in = 0` the inner solves are skipped.
pub fn ccp_select(data: &TwoSampleData, cfg: &GaussConfig, d: usize) -> Result<CcpOutcome> {
    cfg.validate()?;
    let dim = data.dim();
    if d == 0 || d > dim {
        return invalid(format!("need 1 <= d <= D, got d = {d}, D = {dim}"));
    }
    let pairs = PairMatrix::new(data, cfg.gamma)?;
    let batch = cfg.batch.min(pairs.n() * pairs.m());
    let mut z = SpectraPoint::uniform(dim, 1.0)?;
    let mut trajectory = vec![record(&pairs, &z, cfg.lambda, 0, 0.0)?];
    if cfg.t_in > 0 {
        let radius = (dim as f64).ln();
        for k in 0..cfg.t_out {
            let lin = pairs.linearize(z.z());
            let mut rng = cfg.rng.derive_stream(k as u64).rng();
            let oracle = |p: &SpectraPoint, r: &mut dyn rand::RngCore| Ok(pairs.gradient(&lin, p.z(), cfg.lambda, batch, r));
            let out = smd_run(oracle, &z, cfg.t_in, StepRule::entropic(dim, 1.0, None), &mut rng)?;
            z = out.average;
            let gap = out.m_star * (4.0 * radius / cfg.t_in as f64).sqrt();
            trajectory.push(record(&pairs, &z, cfg.lambda, k + 1, gap)?);
        }
    }
    let selection = extract_selection(&z, d)?;
    let last = trajectory.last().map(|r| r.objective).unwrap_or(0.0);
    Ok(CcpOutcome {
        selection,
        trajectory,
        z,
        no_signal: last.abs() < NO_SIGNAL_TOL,
    })
}

/// Writes one JSON object per trajectory record.
pub fn write_trajectory(path: &Path, records: &[CcpRecord]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::InvalidInput(e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Sparse unit vector from the leading eigenvector of `Z`: the `d` largest
/// entries in magnitude (ties to the lowest index), renormalized, with the
/// first nonzero entry positive.
///
/// When the top eigenvalue is repeated, the all-ones vector projected onto
/// its eigenspace is used instead, which does not depend on the basis the
/// eigensolver returns. If every kept entry is zero the `d` largest diagonal
/// entries of `Z` are used.
pub fn extract_selection(z: &SpectraPoint, d: usize) -> Result<SelectionVector> {
    let dim = z.dim();
    if d == 0 || d > dim {
        return invalid(format!("need 1 <= d <= D, got d = {d}, D = {dim}"));
    }
    let (vals, vecs) = sorted_eigen(z.z().clone(), "selection extraction")?;
    let tol = 1e-9 * vals[0].abs().max(f64::MIN_POSITIVE);
    let tied = vals.iter().take_while(|&&l| vals[0] - l <= tol).count();
    let v: Vec<f64> = if tied == 1 {
        vecs.column(0).iter().copied().collect()
    } else {
        let basis = vecs.columns(0, tied);
        let coef = basis.transpose() * nalgebra::DVector::from_element(dim, 1.0);
        (basis * coef).iter().copied().collect()
    };
    let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let keep = top_d_indices(&mags, d);
    let kept_zero = keep.iter().all(|&k| mags[k] <= 1e-12 * scale.max(f64::MIN_POSITIVE)) || scale == 0.0;
    let (support, mut values): (Vec<usize>, Vec<f64>) = if kept_zero {
        let diag: Vec<f64> = z.z().diagonal().iter().copied().collect();
        let keep = top_d_indices(&diag, d);
        let values = keep.iter().map(|&k| diag[k].max(0.0).sqrt()).collect();
        (keep, values)
    } else {
        let values = keep.iter().map(|&k| v[k]).collect();
        (keep, values)
    };
    if let Some(first) = values.iter().find(|x| **x != 0.0) {
        if *first < 0.0 {
            values.iter_mut().for_each(|x| *x = -*x);
        }
    }
    SelectionVector::from_support(dim, &support, &values, d)
}

/// Outcome of the penalty search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// Validation statistic for each grid entry, in grid order.
    pub scores: Vec<f64>,
}

/// Runs [`ccp_select`] for every grid value on the training data and keeps
/// the one whose extracted direction has the largest Gaussian MMD on the
/// validation data. Scores equal to within `1e-12` relative count as tied
/// and go to the smaller `λ`.
pub fn lambda_grid_select(
    train: &TwoSampleData,
    val: &TwoSampleData,
    cfg: &GaussConfig,
    d: usize,
) -> Result<LambdaChoice> {
    if cfg.lambda_grid.is_empty() {
        return invalid("lambda grid is empty");
    }
    if train.dim() != val.dim() {
        return Err(Error::DimensionMismatch {
            context: "validation columns".into(),
            expected: train.dim(),
            found: val.dim(),
        });
    }
    let kernel = KernelSpec::Gaussian { gamma: cfg.gamma };
    let scores: Vec<f64> = cfg
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let run = GaussConfig {
                lambda,
                ..cfg.clone()
            };
            let out = ccp_select(train, &run, d)?;
            mmd_sq(&kernel, &out.selection, val)
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..scores.len() {
        let (s, b) = (scores[i], scores[best]);
        let tie = (s - b).abs() <= 1e-12 * (1.0 + s.abs().max(b.abs()));
        if (!tie && s > b) || (tie && cfg.lambda_grid[i] < cfg.lambda_grid[best]) {
            best = i;
        }
    }
    Ok(LambdaChoice {
        lambda: cfg.lambda_grid[best],
        scores,
    })
}
