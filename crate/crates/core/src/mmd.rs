//! Kernels, the empirical MMD statistic, bandwidth defaults and the
//! concentration radius.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{SelectionVector, TwoSampleData};
use crate::error::{invalid, Error, Result};

/// Kernel family evaluated on a direction `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `Σ z_k x_k y_k`
    Linear,
    /// `(Σ z_k x_k y_k + c)²`
    Quadratic { c: f64 },
    /// `exp(-(Σ z_k (x_k - y_k))² / (2γ))`
    Gaussian { gamma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Quadratic { c } if c > 0.0 && c.is_finite() => Ok(()),
            KernelSpec::Gaussian { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            other => invalid(format!("kernel bandwidth must be positive and finite: {other:?}")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Quadratic { .. } => "quadratic",
            KernelSpec::Gaussian { .. } => "gaussian",
        }
    }
}

/// Kernel value on raw slices, iterating only over `support`.
///
/// Products are formed as `z * (x * y)` and differences as `x - y` so that
/// swapping `x` and `y` gives a bitwise identical value.
#[inline]
pub(crate) fn kernel_value(spec: &KernelSpec, z: &[f64], support: &[usize], x: &[f64], y: &[f64]) -> f64 {
    match *spec {
        KernelSpec::Linear => support.iter().map(|&k| z[k] * (x[k] * y[k])).sum(),
        KernelSpec::Quadratic { c } => {
            let s: f64 = support.iter().map(|&k| z[k] * (x[k] * y[k])).sum();
            (s + c) * (s + c)
        }
        KernelSpec::Gaussian { gamma } => {
            let s: f64 = support.iter().map(|&k| z[k] * (x[k] - y[k])).sum();
            (-(s * s) / (2.0 * gamma)).exp()
        }
    }
}

/// `K_z(x, y)` for the chosen family.
pub fn kernel_eval(spec: &KernelSpec, z: &SelectionVector, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    let dim = z.dim();
    for (len, what) in [(x.len(), "x"), (y.len(), "y")] {
        if len != dim {
            return Err(Error::DimensionMismatch {
                context: format!("kernel argument {what}"),
                expected: dim,
                found: len,
            });
        }
    }
    Ok(kernel_value(spec, z.z(), z.support(), x, y))
}

fn check_dims(z: &SelectionVector, data: &TwoSampleData) -> Result<()> {
    if z.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            context: "selection vector vs data".into(),
            expected: data.dim(),
            found: z.dim(),
        });
    }
    Ok(())
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Empirical squared MMD (V-statistic, diagonal terms included):
/// `Σ K(x,x')/n² + Σ K(y,y')/m² - 2 Σ K(x,y)/(mn)`.
pub fn mmd_sq(spec: &KernelSpec, z: &SelectionVector, data: &TwoSampleData) -> Result<f64> {
    spec.validate()?;
    check_dims(z, data)?;
    let xs: Vec<Vec<f64>> = (0..data.n()).map(|i| row(data.x(), i)).collect();
    let ys: Vec<Vec<f64>> = (0..data.m()).map(|i| row(data.y(), i)).collect();
    let (zz, sup) = (z.z(), z.support());
    let within = |pts: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for a in pts {
            for b in pts {
                s += kernel_value(spec, zz, sup, a, b);
            }
        }
        s
    };
    let sxx = within(&xs);
    let syy = within(&ys);
    // Cross terms are summed in sorted order so the statistic is exactly
    // symmetric under exchanging the groups.
    let mut cross: Vec<f64> = Vec::with_capacity(xs.len() * ys.len());
    for a in &xs {
        for b in &ys {
            cross.push(kernel_value(spec, zz, sup, a, b));
        }
    }
    cross.sort_by(f64::total_cmp);
    let sxy: f64 = cross.iter().sum();
    let (n, m) = (data.n(), data.m());
    let nn = (n * n) as f64;
    let mm = (m * m) as f64;
    let nm = (n * m) as f64;
    Ok(sxx / nn + syy / mm - 2.0 * sxy / nm)
}

/// Kernel Gram matrix over the rows of `points`.
pub fn gram_matrix(spec: &KernelSpec, z: &SelectionVector, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if points.ncols() != z.dim() {
        return Err(Error::DimensionMismatch {
            context: "gram points vs selection vector".into(),
            expected: z.dim(),
            found: points.ncols(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..points.nrows()).map(|i| row(points, i)).collect();
    let n = rows.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel_value(spec, z.z(), z.support(), &rows[i], &rows[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Median of the `n·m` squared Euclidean distances between the groups
/// (midpoint of the two central values for an even count).
pub fn median_heuristic(data: &TwoSampleData) -> Result<f64> {
    let (x, y) = (data.x(), data.y());
    let mut d2 = Vec::with_capacity(data.n() * data.m());
    for i in 0..data.n() {
        for j in 0..data.m() {
            let s: f64 = (0..data.dim()).map(|k| (x[(i, k)] - y[(j, k)]).powi(2)).sum();
            d2.push(s);
        }
    }
    d2.sort_by(f64::total_cmp);
    let len = d2.len();
    let med = if len % 2 == 1 {
        d2[len / 2]
    } else {
        0.5 * (d2[len / 2 - 1] + d2[len / 2])
    };
    if med <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(med)
}

/// Default Gaussian bandwidth: the median heuristic divided by `D`, the
/// mean squared length of a difference projected on a random unit direction.
pub fn default_gamma(data: &TwoSampleData) -> Result<f64> {
    Ok(median_heuristic(data)? / data.dim() as f64)
}

/// Default quadratic offset `c = √median / 2`.
pub fn default_quadratic_c(data: &TwoSampleData) -> Result<f64> {
    Ok(median_heuristic(data)?.sqrt() / 2.0)
}

/// Inputs of the high-probability deviation radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationInputs {
    pub m: usize,
    pub n: usize,
    /// Upper bound on the kernel values.
    pub kbar: f64,
    /// Failure probability.
    pub eta: f64,
}

impl ConcentrationInputs {
    pub fn new(m: usize, n: usize, kbar: f64, eta: f64) -> Result<Self> {
        if m == 0 || n == 0 {
            return invalid("sample sizes must be positive");
        }
        if !(kbar > 0.0 && kbar.is_finite()) {
            return invalid("kernel bound must be positive");
        }
        if !(eta > 0.0 && eta < 1.0) {
            return invalid("eta must lie in (0, 1)");
        }
        Ok(Self { m, n, kbar, eta })
    }
}

/// `ε = 2(√(K̄/m) + √(K̄/n)) + √(2K̄(m+n)/(mn) · ln(2/η))`.
pub fn concentration_epsilon(inp: &ConcentrationInputs) -> f64 {
    let (m, n) = (inp.m as f64, inp.n as f64);
    let k = inp.kbar;
    2.0 * ((k / m).sqrt() + (k / n).sqrt()) + (2.0 * k * (m + n) / (m * n) * (2.0 / inp.eta).ln()).sqrt()
}
