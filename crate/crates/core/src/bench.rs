//! Block-Gaussian synthetic data, selection-quality metrics and the
//! power and recovery experiment drivers.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TwoSampleData;
use crate::error::{invalid, Result};
use crate::rng::RandomSource;
use crate::testing::{permutation_test, KernelChoice, Selector, TestConfig};

pub const BLOCK_SIZE: usize = 3;

/// Which block-one parameters differ between the groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthMode {
    /// Separate mean and covariance draws.
    Alternative,
    /// Shared mean, separate covariance draws.
    CovarianceOnly,
    /// Every parameter shared.
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub blocks: usize,
    pub n: usize,
    pub m: usize,
    pub wishart_df: usize,
    pub mode: SynthMode,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(blocks: usize, n: usize, m: usize, mode: SynthMode, seed: u64) -> Self {
        Self {
            blocks,
            n,
            m,
            wishart_df: 3,
            mode,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        BLOCK_SIZE * self.blocks
    }

    pub fn null_mode(&self) -> bool {
        self.mode == SynthMode::Null
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.n == 0 || self.m == 0 {
            return invalid("blocks and sample sizes must be positive");
        }
        if self.wishart_df < BLOCK_SIZE {
            return invalid(format!("Wishart degrees of freedom must be at least {BLOCK_SIZE}"));
        }
        Ok(())
    }

    /// Indices of the features that differ between the groups.
    pub fn true_support(&self) -> Vec<usize> {
        if self.null_mode() {
            Vec::new()
        } else {
            (0..BLOCK_SIZE).collect()
        }
    }
}

/// Mean and covariance factor `L` (covariance `LLᵀ`) of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub mean: Vector3<f64>,
    pub factor: Matrix3<f64>,
}

impl BlockParams {
    pub fn covariance(&self) -> Matrix3<f64> {
        self.factor * self.factor.transpose()
    }
}

/// Per-block parameters of both groups. Shared blocks are the same
/// allocation in both lists.
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub x: Vec<Arc<BlockParams>>,
    pub y: Vec<Arc<BlockParams>>,
}

fn bartlett_factor<R: Rng + ?Sized>(dim: usize, df: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if dim == 0 || df < dim {
        return invalid(format!("Wishart sampling needs df >= dim >= 1, got df = {df}, dim = {dim}"));
    }
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let chi = ChiSquared::new((df - i) as f64).map_err(|e| crate::error::Error::InvalidInput(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    Ok(a)
}

/// Draw from Wishart(df, I) by the Bartlett decomposition.
pub fn wishart_sample<R: Rng + ?Sized>(dim: usize, df: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let a = bartlett_factor(dim, df, rng)?;
    Ok(&a * a.transpose())
}

fn unit_sphere<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

fn block<R: Rng + ?Sized>(df: usize, rng: &mut R) -> Result<BlockParams> {
    let mean = unit_sphere(rng);
    let a = bartlett_factor(BLOCK_SIZE, df, rng)?;
    Ok(BlockParams {
        mean,
        factor: Matrix3::from_fn(|i, j| a[(i, j)]),
    })
}

/// Parameters for `spec`, drawn from stream 0 of `src`.
pub fn synth_params(spec: &SynthSpec, src: &RandomSource) -> Result<SynthParams> {
    spec.validate()?;
    let mut rng = src.derive_stream(0).rng();
    let mut x = Vec::with_capacity(spec.blocks);
    let mut y = Vec::with_capacity(spec.blocks);
    for b in 0..spec.blocks {
        let px = Arc::new(block(spec.wishart_df, &mut rng)?);
        let py = if b == 0 && !spec.null_mode() {
            let other = block(spec.wishart_df, &mut rng)?;
            let mean = match spec.mode {
                SynthMode::CovarianceOnly => px.mean,
                _ => other.mean,
            };
            Arc::new(BlockParams {
                mean,
                factor: other.factor,
            })
        } else {
            Arc::clone(&px)
        };
        x.push(px);
        y.push(py);
    }
    Ok(SynthParams { x, y })
}

fn draw<R: Rng + ?Sized>(params: &[Arc<BlockParams>], rows: usize, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, BLOCK_SIZE * params.len());
    for i in 0..rows {
        for (b, p) in params.iter().enumerate() {
            let xi = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
            let v = p.mean + p.factor * xi;
            for k in 0..BLOCK_SIZE {
                out[(i, BLOCK_SIZE * b + k)] = v[k];
            }
        }
    }
    out
}

/// Samples for `spec` from the stream tree rooted at `src`, together with
/// the true support.
pub fn synth_from(spec: &SynthSpec, src: &RandomSource) -> Result<(TwoSampleData, Vec<usize>)> {
    let params = synth_params(spec, src)?;
    let x = draw(&params.x, spec.n, &mut src.derive_stream(1).rng());
    let y = draw(&params.y, spec.m, &mut src.derive_stream(2).rng());
    Ok((TwoSampleData::new(x, y)?, spec.true_support()))
}

/// [`synth_from`] seeded by `spec.seed`.
pub fn synth_block_gaussian(spec: &SynthSpec) -> Result<(TwoSampleData, Vec<usize>)> {
    synth_from(spec, &RandomSource::new(spec.seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub fdp: f64,
    pub ndp: f64,
}

/// `FDP = |I \ I*| / |I|`, `NDP = |I* \ I| / |I*|`.
pub fn fdp_ndp(selected: &[usize], truth: &[usize]) -> Result<SelectionMetrics> {
    let s: BTreeSet<usize> = selected.iter().copied().collect();
    let t: BTreeSet<usize> = truth.iter().copied().collect();
    if s.is_empty() || t.is_empty() {
        return invalid("FDP and NDP need non-empty index sets");
    }
    Ok(SelectionMetrics {
        fdp: s.difference(&t).count() as f64 / s.len() as f64,
        ndp: t.difference(&s).count() as f64 / t.len() as f64,
    })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    pub synth: SynthSpec,
    pub selectors: Vec<Selector>,
    pub trials: usize,
    pub test: TestConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub selector: String,
    pub d: usize,
    pub rejections: usize,
    /// Rejection rate: power, or type-I error in null mode.
    pub rate: f64,
    /// Standard deviation of the per-trial rejection indicator.
    pub sd: f64,
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    pub null_mode: bool,
    pub trials: usize,
    pub alpha: f64,
    pub rows: Vec<RateRow>,
}

impl PowerSummary {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("selector\td\trejections\ttrials\trate\tsd\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.selector, r.d, r.rejections, self.trials, r.rate, r.sd
            ));
        }
        s
    }
}

/// Each trial `t` draws data from stream `(t, 0)` of the seed and runs every
/// selector's permutation test on stream `(t, 1)`, so listing a selector
/// twice gives identical rows.
pub fn run_power_experiment(cfg: &PowerConfig) -> Result<PowerSummary> {
    if cfg.trials == 0 {
        return invalid("need at least one trial");
    }
    if cfg.selectors.is_empty() {
        return invalid("need at least one selector");
    }
    cfg.test.validate()?;
    let root = RandomSource::new(cfg.seed);
    let per_trial: Vec<Vec<(bool, f64)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let src = root.derive_stream(t as u64);
            let (data, _) = synth_from(&cfg.synth, &src.derive_stream(0))?;
            cfg.selectors
                .iter()
                .map(|sel| {
                    let kernel = KernelChoice::auto(sel.kind.family());
                    let r = permutation_test(&data, &kernel, sel, &cfg.test, &src.derive_stream(1))?;
                    Ok((r.reject, r.p_value))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows = cfg
        .selectors
        .iter()
        .enumerate()
        .map(|(s, sel)| {
            let hits: Vec<f64> = per_trial.iter().map(|t| if t[s].0 { 1.0 } else { 0.0 }).collect();
            let (rate, sd) = mean_sd(&hits);
            RateRow {
                selector: sel.kind.name().into(),
                d: sel.d,
                rejections: hits.iter().filter(|&&h| h > 0.0).count(),
                rate,
                sd,
                p_values: per_trial.iter().map(|t| t[s].1).collect(),
            }
        })
        .collect();
    Ok(PowerSummary {
        null_mode: cfg.synth.null_mode(),
        trials: cfg.trials,
        alpha: cfg.test.alpha,
        rows,
    })
}

/// Anything that picks a feature set from data.
pub trait SupportSelector: Sync {
    fn name(&self) -> String;
    fn select(&self, data: &TwoSampleData, rng: &RandomSource) -> Result<Vec<usize>>;
}

impl SupportSelector for Selector {
    fn name(&self) -> String {
        self.kind.name().into()
    }

    /// Trains on all of `data` with the default-bandwidth kernel.
    fn select(&self, data: &TwoSampleData, rng: &RandomSource) -> Result<Vec<usize>> {
        let kernel = KernelChoice::auto(self.kind.family()).resolve(data)?;
        Ok(self.train(&kernel, data, rng)?.selection.support().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub synth: SynthSpec,
    pub selectors: Vec<Selector>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub selector: String,
    pub mean_fdp: f64,
    pub sd_fdp: f64,
    pub mean_ndp: f64,
    pub sd_ndp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub trials: usize,
    pub rows: Vec<RecoveryRow>,
}

impl RecoverySummary {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("selector\ttrials\tmean_fdp\tsd_fdp\tmean_ndp\tsd_ndp\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.selector, self.trials, r.mean_fdp, r.sd_fdp, r.mean_ndp, r.sd_ndp
            ));
        }
        s
    }
}

/// Recovery experiment with arbitrary selectors. Trial `t` draws data from
/// stream `(t, 0)` and hands stream `(t, 1)` to every selector.
pub fn run_recovery_with(
    synth: &SynthSpec,
    selectors: &[&dyn SupportSelector],
    trials: usize,
    seed: u64,
) -> Result<RecoverySummary> {
    if trials == 0 {
        return invalid("need at least one trial");
    }
    if synth.null_mode() {
        return invalid("recovery needs a non-empty true support");
    }
    let root = RandomSource::new(seed);
    let per_trial: Vec<Vec<SelectionMetrics>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let src = root.derive_stream(t as u64);
            let (data, truth) = synth_from(synth, &src.derive_stream(0))?;
            selectors
                .iter()
                .map(|s| fdp_ndp(&s.select(&data, &src.derive_stream(1))?, &truth))
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows = selectors
        .iter()
        .enumerate()
        .map(|(s, sel)| {
            let fdp: Vec<f64> = per_trial.iter().map(|t| t[s].fdp).collect();
            let ndp: Vec<f64> = per_trial.iter().map(|t| t[s].ndp).collect();
            let (mean_fdp, sd_fdp) = mean_sd(&fdp);
            let (mean_ndp, sd_ndp) = mean_sd(&ndp);
            RecoveryRow {
                selector: sel.name(),
                mean_fdp,
                sd_fdp,
                mean_ndp,
                sd_ndp,
            }
        })
        .collect();
    Ok(RecoverySummary { trials, rows })
}

pub fn run_recovery_experiment(cfg: &RecoveryConfig) -> Result<RecoverySummary> {
    let sels: Vec<&dyn SupportSelector> = cfg.selectors.iter().map(|s| s as &dyn SupportSelector).collect();
    run_recovery_with(&cfg.synth, &sels, cfg.trials, cfg.seed)
}
