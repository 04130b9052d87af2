use crate::error::{invalid, Result};

/// Euclidean projection onto `{q ∈ [0,1]^D : Σq = d}`.
///
/// The projection is `clip(v - θ, 0, 1)` for the `θ` at which the clipped
/// sum equals `d`; the sum is piecewise linear in `θ` with breakpoints at
/// `v_i` and `v_i - 1`, so `θ` is found exactly by a scan over breakpoints.
pub fn project_capped_simplex(v: &[f64], d: f64) -> Result<Vec<f64>> {
    let dim = v.len() as f64;
    if !(d >= 0.0 && d <= dim) || v.iter().any(|x| !x.is_finite()) {
        return invalid(format!("cannot project onto capped simplex with sum {d} in dimension {dim}"));
    }
    let total = |theta: f64| -> f64 { v.iter().map(|&x| (x - theta).clamp(0.0, 1.0)).sum() };
    let mut bps: Vec<f64> = v.iter().flat_map(|&x| [x, x - 1.0]).collect();
    bps.sort_by(f64::total_cmp);
    // total is non-increasing in θ: find adjacent breakpoints bracketing d.
    let mut theta = bps[0];
    let mut found = false;
    for w in bps.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (slo, shi) = (total(lo), total(hi));
        if slo >= d && shi <= d {
            theta = if slo == shi { lo } else { lo + (slo - d) * (hi - lo) / (slo - shi) };
            found = true;
            break;
        }
    }
    if !found {
        theta = if total(bps[0]) <= d { bps[0] } else { *bps.last().unwrap() };
    }
    Ok(v.iter().map(|&x| (x - theta).clamp(0.0, 1.0)).collect())
}
