//! Gaussian-kernel maximum mean discrepancy on the real line and its
//! large-bandwidth behaviour: `σ0² MMD²(P, Q) → (E_P X − E_Q X)²` as `σ0 → ∞`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pooled samples above this size are thinned (evenly spaced in sorted order)
/// before the median heuristic is computed.
pub const MEDIAN_HEURISTIC_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdConfig {
    pub sigma0: f64,
}

impl MmdConfig {
    pub fn new(sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(Error::Precondition(format!("bandwidth must be positive and finite, got {sigma0}")));
        }
        Ok(Self { sigma0 })
    }
}

/// `mean_{a in xs, b in ys} (1 - exp(-(a - b)^2 / (2 σ0^2)))`, summed row by row
/// in a fixed order so the result does not depend on the thread count.
fn mean_one_minus_kernel(xs: &[f64], ys: &[f64], sigma0: f64) -> f64 {
    let scale = 1.0 / (2.0 * sigma0 * sigma0);
    let rows: Vec<f64> = xs
        .par_iter()
        .map(|&a| ys.iter().map(|&b| -(-(a - b) * (a - b) * scale).exp_m1()).sum::<f64>())
        .collect();
    rows.iter().sum::<f64>() / (xs.len() as f64 * ys.len() as f64)
}

/// V-statistic estimate of MMD² with kernel `exp(-(x - y)^2 / (2 σ0^2))`.
///
/// Written in terms of `1 - k` (via `expm1`), which keeps full relative
/// precision when the bandwidth is much larger than the data spread.
pub fn gaussian_mmd_sq(xs: &[f64], ys: &[f64], sigma0: f64) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Size("MMD needs two non-empty samples".into()));
    }
    MmdConfig::new(sigma0)?;
    // Canonical argument order makes the result exactly symmetric.
    let swap = (xs.len(), ys.len()).cmp(&(ys.len(), xs.len())).then_with(|| {
        xs.iter().zip(ys).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let (xs, ys) = if swap.is_gt() { (ys, xs) } else { (xs, ys) };
    let cross = mean_one_minus_kernel(xs, ys, sigma0);
    let within_x = mean_one_minus_kernel(xs, xs, sigma0);
    let within_y = mean_one_minus_kernel(ys, ys, sigma0);
    Ok(2.0 * cross - (within_x + within_y))
}

/// Median of the pairwise distances `|a - b|` (distinct index pairs) over the
/// pooled sample.
pub fn median_heuristic(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let mut pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    if pooled.len() < 2 {
        return Err(Error::Size("median heuristic needs at least two points".into()));
    }
    if pooled.len() > MEDIAN_HEURISTIC_CAP {
        pooled.sort_by(f64::total_cmp);
        let step = pooled.len() as f64 / MEDIAN_HEURISTIC_CAP as f64;
        pooled = (0..MEDIAN_HEURISTIC_CAP).map(|k| pooled[(k as f64 * step) as usize]).collect();
    }
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for (i, a) in pooled.iter().enumerate() {
        for b in &pooled[i + 1..] {
            dists.push((a - b).abs());
        }
    }
    dists.sort_by(f64::total_cmp);
    let k = dists.len();
    Ok(if k % 2 == 1 { dists[k / 2] } else { 0.5 * (dists[k / 2 - 1] + dists[k / 2]) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub sigma0: f64,
    /// `σ0² · MMD²`.
    pub scaled_mmd_sq: f64,
    /// `(x̄ − ȳ)²`.
    pub target: f64,
}

impl LimitRow {
    pub fn deviation(&self) -> f64 {
        (self.scaled_mmd_sq - self.target).abs()
    }
}

/// `σ0² MMD²` at each bandwidth next to the squared sample-mean gap.
pub fn large_bandwidth_limit_check(xs: &[f64], ys: &[f64], sigmas: &[f64]) -> Result<Vec<LimitRow>> {
    if sigmas.len() < 3 {
        return Err(Error::Size(format!("need at least 3 bandwidths, got {}", sigmas.len())));
    }
    if sigmas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("bandwidths must be strictly increasing".into()));
    }
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Size("MMD needs two non-empty samples".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let target = (mean(xs) - mean(ys)).powi(2);
    sigmas
        .iter()
        .map(|&sigma0| {
            let mmd = gaussian_mmd_sq(xs, ys, sigma0)?;
            Ok(LimitRow { sigma0, scaled_mmd_sq: sigma0 * sigma0 * mmd, target })
        })
        .collect()
}
