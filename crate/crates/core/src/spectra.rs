//! First-order machinery over the spectrahedron `{Z ⪰ 0, Tr Z = τ}`:
//! entropic mirror steps, the von Neumann Bregman divergence, and a
//! stochastic mirror-descent driver that averages its iterates.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::DMatrix;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trs::max_asymmetry;

const EIG_ITERS: usize = 10_000;

/// Symmetric PSD matrix with fixed trace `tau`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectraPoint {
    z: DMatrix<f64>,
    tau: f64,
    eigen_floor: f64,
    // Floored logarithm, kept when a mirror step already knows it.
    #[serde(skip)]
    log_z: Option<DMatrix<f64>>,
}

impl PartialEq for SpectraPoint {
    fn eq(&self, other: &Self) -> bool {
        self.z == other.z && self.tau == other.tau && self.eigen_floor == other.eigen_floor
    }
}

fn eigen(a: &DMatrix<f64>, ctx: &'static str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(a.clone(), f64::EPSILON, EIG_ITERS).ok_or(Error::EigenFailure(ctx))
}

fn rebuild(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = f(lam);
        scaled.column_mut(j).scale_mut(s);
    }
    let m = scaled * u.transpose();
    (&m + m.transpose()) * 0.5
}

impl SpectraPoint {
    /// Validates symmetry (1e-10), eigenvalues (≥ -1e-9) and trace (1e-9,
    /// relative to `max(1, τ)`).
    pub fn new(z: DMatrix<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return invalid("spectrahedron trace must be positive");
        }
        let k = z.nrows();
        if k == 0 || z.ncols() != k {
            return invalid("spectrahedron point must be a non-empty square matrix");
        }
        if z.iter().any(|v| !v.is_finite()) {
            return invalid("spectrahedron point has non-finite entries");
        }
        let asym = max_asymmetry(&z);
        if asym > 1e-10 * z.amax().max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        let z = (&z + z.transpose()) * 0.5;
        if (z.trace() - tau).abs() > 1e-9 * tau.max(1.0) {
            return invalid(format!("trace {} differs from target {tau}", z.trace()));
        }
        let eig = eigen(&z, "spectrahedron point")?;
        let lmin = eig.eigenvalues.min();
        if lmin < -1e-9 * tau.max(1.0) {
            return invalid(format!("matrix is not PSD (min eigenvalue {lmin})"));
        }
        Ok(Self {
            z,
            tau,
            eigen_floor: 1e-12 * tau,
            log_z: None,
        })
    }

    /// `τ I / k`, the maximum-entropy point.
    pub fn uniform(k: usize, tau: f64) -> Result<Self> {
        Self::new(DMatrix::identity(k, k) * (tau / k as f64), tau)
    }

    /// Scales a symmetric PSD matrix to trace `τ` after clipping negative
    /// eigenvalues.
    pub fn normalized(z: &DMatrix<f64>, tau: f64) -> Result<Self> {
        let sym = (z + z.transpose()) * 0.5;
        let eig = eigen(&sym, "spectrahedron normalization")?;
        let clipped = rebuild(&eig, |l| l.max(0.0));
        let tr = clipped.trace();
        if !(tr > 0.0) {
            return invalid("cannot normalize a matrix with no positive spectrum");
        }
        Self::new(clipped * (tau / tr), tau)
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn eigen_floor(&self) -> f64 {
        self.eigen_floor
    }

    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    fn log(&self) -> Result<DMatrix<f64>> {
        if let Some(l) = &self.log_z {
            return Ok(l.clone());
        }
        let eig = eigen(&self.z, "matrix logarithm")?;
        let floor = self.eigen_floor;
        Ok(rebuild(&eig, |l| l.max(floor).ln()))
    }
}

fn check_gradient(p: &SpectraPoint, g: &DMatrix<f64>) -> Result<()> {
    if g.nrows() != p.dim() || g.ncols() != p.dim() {
        return Err(Error::DimensionMismatch {
            context: "mirror step gradient".into(),
            expected: p.dim(),
            found: g.nrows(),
        });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return invalid("gradient has non-finite entries");
    }
    let asym = max_asymmetry(g);
    if asym > 1e-10 * g.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// `Y = exp(log Z - step·G)` rescaled to trace `τ`. Eigenvalues of `Z` are
/// floored at `eigen_floor` before the logarithm.
pub fn mirror_step(p: &SpectraPoint, g: &DMatrix<f64>, step: f64) -> Result<SpectraPoint> {
    check_gradient(p, g)?;
    if !(step >= 0.0 && step.is_finite()) {
        return invalid("mirror step size must be non-negative");
    }
    let m = p.log()? - g * step;
    let m = (&m + m.transpose()) * 0.5;
    let eig = eigen(&m, "matrix exponential")?;
    let top = eig.eigenvalues.max();
    let tr: f64 = eig.eigenvalues.iter().map(|l| (l - top).exp()).sum();
    let shift = top - (p.tau / tr).ln();
    let y = rebuild(&eig, |l| (l - shift).exp());
    let floor = p.eigen_floor.ln();
    let log_z = rebuild(&eig, |l| (l - shift).max(floor));
    Ok(SpectraPoint {
        z: y,
        tau: p.tau,
        eigen_floor: p.eigen_floor,
        log_z: Some(log_z),
    })
}

/// `Tr(X log X - X log Y)`, zero eigenvalues of `X` contributing nothing.
pub fn bregman(p1: &SpectraPoint, p2: &SpectraPoint) -> Result<f64> {
    if p1.dim() != p2.dim() {
        return Err(Error::DimensionMismatch {
            context: "Bregman divergence".into(),
            expected: p1.dim(),
            found: p2.dim(),
        });
    }
    if (p1.tau - p2.tau).abs() > 1e-12 * p1.tau.max(1.0) {
        return invalid("Bregman divergence needs equal traces");
    }
    let eig = eigen(&p1.z, "entropy")?;
    let ent: f64 = eig.eigenvalues.iter().filter(|&&l| l > 0.0).map(|&l| l * l.ln()).sum();
    let cross = (&p1.z * p2.log()?).trace();
    Ok(ent - cross)
}

/// Step size for [`smd_run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    Constant(f64),
    /// `γ = sqrt(2κV / (T M²))` with `V` the Bregman radius. With `m_star`
    /// unset, `M` is twice the running maximum of observed `‖G‖_op`
    /// (estimated by power iteration).
    Entropic { kappa: f64, radius: f64, m_star: Option<f64> },
}

impl StepRule {
    /// `κ = 1/2` and radius `τ ln k`, the divergence bound from `τI/k`.
    pub fn entropic(k: usize, tau: f64, m_star: Option<f64>) -> Self {
        StepRule::Entropic {
            kappa: 0.5,
            radius: tau * (k as f64).ln().max(f64::MIN_POSITIVE),
            m_star,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmdOutcome {
    pub average: SpectraPoint,
    /// Gradient bound used by the last step.
    pub m_star: f64,
    pub last_step: f64,
}

/// `‖G‖_op` of a symmetric matrix by power iteration from a fixed start;
/// never exceeds the true value.
pub(crate) fn op_norm(g: &DMatrix<f64>) -> Result<f64> {
    let k = g.nrows();
    let mut v = nalgebra::DVector::from_fn(k, |i, _| 1.0 + i as f64 / k as f64);
    v.normalize_mut();
    let mut est = 0.0f64;
    for _ in 0..30 {
        let w = g * &v;
        let norm = w.norm();
        if !(norm > 0.0) {
            break;
        }
        let prev = est;
        est = est.max(norm);
        v = w / norm;
        if est - prev <= 1e-9 * est {
            break;
        }
    }
    Ok(est)
}

/// Runs `t_in` mirror steps on gradients drawn from `oracle` and returns the
/// uniform average of the iterates after each step.
pub fn smd_run<F>(mut oracle: F, p0: &SpectraPoint, t_in: usize, rule: StepRule, rng: &mut dyn RngCore) -> Result<SmdOutcome>
where
    F: FnMut(&SpectraPoint, &mut dyn RngCore) -> Result<DMatrix<f64>>,
{
    if t_in == 0 {
        return invalid("stochastic mirror descent needs at least one iteration");
    }
    let mut p = p0.clone();
    let mut sum = DMatrix::zeros(p0.dim(), p0.dim());
    let mut seen_max = 0.0f64;
    let mut m_used = 0.0;
    let mut step = 0.0;
    for _ in 0..t_in {
        let g = oracle(&p, rng)?;
        check_gradient(&p, &g)?;
        let g = (&g + g.transpose()) * 0.5;
        step = match rule {
            StepRule::Constant(s) => s,
            StepRule::Entropic { kappa, radius, m_star } => {
                let m = match m_star {
                    Some(m) => m,
                    None => {
                        seen_max = seen_max.max(op_norm(&g)?);
                        2.0 * seen_max
                    }
                };
                m_used = m;
                if m > 0.0 {
                    (2.0 * kappa * radius / (t_in as f64 * m * m)).sqrt()
                } else {
                    0.0
                }
            }
        };
        p = mirror_step(&p, &g, step)?;
        sum += p.z();
    }
    let avg = sum / t_in as f64;
    let avg = &avg * (p0.tau / avg.trace());
    Ok(SmdOutcome {
        average: SpectraPoint {
            z: (&avg + avg.transpose()) * 0.5,
            tau: p0.tau,
            eigen_floor: p0.eigen_floor,
            log_z: None,
        },
        m_star: m_used,
        last_step: step,
    })
}
