//! Data-driven choice of λ.
//!
//! For each of `M'` bootstrap replicates one resample and one noise bank are
//! drawn and shared by every λ on the grid. Each (replicate, λ) pair is fitted,
//! and the W2 distance between the fitted model's samples and the reweighted
//! data is recorded. An elbow in the per-λ medians of this diagnostic marks
//! the point where further robustness stops buying fit quality.

use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{
    collect_outcomes, fit_with_bank, quantile_sorted, resample_dataset, with_workers, BootstrapConfig,
    ReplicateFailure, ReplicateSeeds,
};
use crate::cmaes::Evaluation;
use crate::error::{Error, Result};
use crate::measures::{w2sq_discrete_capped, w2sq_sorted_slabs, DualPotential, WeightedDiscreteMeasure};
use crate::rng::{derive_seed, rng_from_seed, SeedPurpose};
use crate::rsw::extract_reweighting;
use crate::simulators::{simulate_batch, NoiseBank, SimulatorSpec};

/// Atoms kept on each side of the diagnostic in more than one dimension.
pub const MULTIVARIATE_SUBSAMPLE: usize = 2048;
/// Minimum normalized chord gap for an elbow.
pub const ELBOW_MIN_GAP: f64 = 0.1;
/// Minimum relative drop of the median from the first λ to the elbow.
pub const ELBOW_MIN_DECREASE: f64 = 0.2;

/// Elbow thresholds and the multivariate subsample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionRule {
    pub min_gap: f64,
    pub min_decrease: f64,
    pub subsample_cap: usize,
}

impl Default for SelectionRule {
    fn default() -> Self {
        Self { min_gap: ELBOW_MIN_GAP, min_decrease: ELBOW_MIN_DECREASE, subsample_cap: MULTIVARIATE_SUBSAMPLE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("λ grid is empty".into()));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("λ grid values must be positive and finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("λ grid must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl TryFrom<Vec<f64>> for LambdaGrid {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<LambdaGrid> for Vec<f64> {
    fn from(grid: LambdaGrid) -> Self {
        grid.values
    }
}

/// `10^(-2 + 4k/14)` for `k = 0..=14`.
pub fn default_grid() -> LambdaGrid {
    LambdaGrid { values: (0..=14).map(|k| 10f64.powf(-2.0 + 4.0 * k as f64 / 14.0)).collect() }
}

/// W2 (not squared) between the model samples at `theta_fit` and the data
/// reweighted by `softmax(-λ g_final)`. Exact in one dimension; otherwise both
/// sides are uniformly subsampled to [`MULTIVARIATE_SUBSAMPLE`] atoms first.
pub fn diagnostic_value(
    theta_fit: &[f64],
    g_final: &DualPotential,
    lambda: f64,
    data: &WeightedDiscreteMeasure,
    spec: &SimulatorSpec,
    bank: &NoiseBank,
) -> Result<f64> {
    diagnostic_value_capped(theta_fit, g_final, lambda, data, spec, bank, MULTIVARIATE_SUBSAMPLE)
}

/// [`diagnostic_value`] with an explicit multivariate subsample size.
pub fn diagnostic_value_capped(
    theta_fit: &[f64],
    g_final: &DualPotential,
    lambda: f64,
    data: &WeightedDiscreteMeasure,
    spec: &SimulatorSpec,
    bank: &NoiseBank,
    cap: usize,
) -> Result<f64> {
    if cap == 0 {
        return Err(Error::Config("subsample cap must be >= 1".into()));
    }
    let samples = simulate_batch(spec, theta_fit, bank)?;
    let reweighted = extract_reweighting(g_final, lambda, data)?;
    let m = data.dim();
    if spec.output_dim() != m {
        return Err(Error::Dimension { expected: m, found: spec.output_dim() });
    }
    let w2sq = if m == 1 {
        let uniform = vec![1.0 / samples.len() as f64; samples.len()];
        w2sq_sorted_slabs(&samples, &uniform, reweighted.coords(), reweighted.weights())
    } else {
        let seed = derive_seed(bank.seed(), 0, SeedPurpose::Subsample);
        let model = subsample(&WeightedDiscreteMeasure::uniform_flat(m, samples)?, cap, seed)?;
        let data_side = subsample(&reweighted, cap, seed.wrapping_add(1))?;
        w2sq_discrete_capped(&model, &data_side, 2 * cap)?
    };
    Ok(w2sq.max(0.0).sqrt())
}

/// Keeps a uniformly chosen subset of at most `cap` atoms, renormalizing their
/// weights.
fn subsample(measure: &WeightedDiscreteMeasure, cap: usize, seed: u64) -> Result<WeightedDiscreteMeasure> {
    if measure.len() <= cap {
        return Ok(measure.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut picked = sample(&mut rng, measure.len(), cap).into_vec();
    picked.sort_unstable();
    let mut coords = Vec::with_capacity(picked.len() * measure.dim());
    let mut weights = Vec::with_capacity(picked.len());
    for &i in &picked {
        coords.extend_from_slice(measure.atom(i));
        weights.push(measure.weights()[i]);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return WeightedDiscreteMeasure::uniform_flat(measure.dim(), coords);
    }
    weights.iter_mut().for_each(|w| *w /= total);
    WeightedDiscreteMeasure::from_flat(measure.dim(), coords, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub median: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaDiagnostic {
    pub grid: LambdaGrid,
    /// `values[k]` holds the diagnostics of every successful replicate at `grid[k]`.
    pub values: Vec<Vec<f64>>,
    /// Replicate index of each entry of `values[k]`.
    pub replicates: Vec<Vec<usize>>,
    pub summaries: Vec<LambdaSummary>,
    pub suggestion: Option<f64>,
    pub failures: Vec<ReplicateFailure>,
}

impl LambdaDiagnostic {
    /// Writes `lambda,replicate,value`, one row per fit.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["lambda", "replicate", "value"])?;
        for ((lambda, values), reps) in self.grid.values().iter().zip(&self.values).zip(&self.replicates) {
            for (v, r) in values.iter().zip(reps) {
                out.write_record([lambda.to_string(), r.to_string(), v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Fits every (replicate, λ) pair and aggregates the diagnostics. Within a
/// replicate the resample, noise bank and optimizer seed are shared across λ.
pub fn run_selection(
    data: &WeightedDiscreteMeasure,
    spec: &SimulatorSpec,
    grid: &LambdaGrid,
    m_prime: usize,
    base: &BootstrapConfig,
    rule: &SelectionRule,
) -> Result<LambdaDiagnostic> {
    if m_prime < 2 {
        return Err(Error::Config(format!("λ selection needs at least 2 replicates, got {m_prime}")));
    }
    base.validate()?;
    let lambdas = grid.values();
    let tasks: Vec<(usize, usize)> = (0..m_prime).flat_map(|j| (0..lambdas.len()).map(move |k| (j, k))).collect();

    let outcomes = with_workers(base.workers, || {
        tasks
            .par_iter()
            .enumerate()
            .map(|(t, &(j, k))| {
                let seeds = ReplicateSeeds::derive(base.master_seed, j);
                let lambda = lambdas[k];
                let sga = base.sga_for(lambda);
                let outcome = resample_dataset(data, seeds.resample).and_then(|resampled| {
                    let bank = NoiseBank::for_spec(spec, seeds.noise_bank, sga.iterations);
                    let cmaes = base.optimizer.cmaes_config(spec, seeds.optimizer);
                    let fit = fit_with_bank(&resampled, spec, &bank, &sga, &cmaes, Evaluation::Parallel)?;
                    diagnostic_value_capped(&fit.theta, &fit.g_final, lambda, &resampled, spec, &bank, rule.subsample_cap)
                });
                (t, outcome)
            })
            .collect::<Vec<_>>()
    })?;
    let (ok, failures) = collect_outcomes(outcomes)?;
    let failures = failures
        .into_iter()
        .map(|f| {
            let (j, k) = tasks[f.index];
            ReplicateFailure { index: j, message: format!("λ = {}: {}", lambdas[k], f.message) }
        })
        .collect();

    let mut values = vec![Vec::with_capacity(m_prime); lambdas.len()];
    let mut replicates = vec![Vec::with_capacity(m_prime); lambdas.len()];
    for (t, v) in ok {
        let (j, k) = tasks[t];
        values[k].push(v);
        replicates[k].push(j);
    }
    let mut summaries = Vec::with_capacity(lambdas.len());
    for (k, vals) in values.iter().enumerate() {
        if vals.is_empty() {
            return Err(Error::Size(format!("every fit at λ = {} failed", lambdas[k])));
        }
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        summaries.push(LambdaSummary {
            lambda: lambdas[k],
            median: quantile_sorted(&sorted, 0.5),
            lower_quartile: quantile_sorted(&sorted, 0.25),
            upper_quartile: quantile_sorted(&sorted, 0.75),
        });
    }
    let suggestion = if lambdas.len() >= 3 {
        let medians: Vec<f64> = summaries.iter().map(|s| s.median).collect();
        suggest_elbow_with(lambdas, &medians, rule)?
    } else {
        None
    };
    Ok(LambdaDiagnostic { grid: grid.clone(), values, replicates, summaries, suggestion, failures })
}

/// Chord-gap elbow on `(log10 λ, median)` after min-max normalization of both
/// axes. Returns the λ whose normalized median lies furthest below the chord
/// joining the first and last points, if that gap is at least
/// [`ELBOW_MIN_GAP`] and the median there is at least [`ELBOW_MIN_DECREASE`]
/// (relative) below the first one.
pub fn suggest_elbow(lambdas: &[f64], medians: &[f64]) -> Result<Option<f64>> {
    suggest_elbow_with(lambdas, medians, &SelectionRule::default())
}

pub fn suggest_elbow_with(lambdas: &[f64], medians: &[f64], rule: &SelectionRule) -> Result<Option<f64>> {
    if lambdas.len() != medians.len() {
        return Err(Error::Structure(format!("{} λ values for {} medians", lambdas.len(), medians.len())));
    }
    if lambdas.len() < 3 {
        return Err(Error::Size(format!("elbow detection needs at least 3 points, got {}", lambdas.len())));
    }
    let x: Vec<f64> = lambdas.iter().map(|l| l.log10()).collect();
    let (x0, x1) = (x[0], x[x.len() - 1]);
    let lo = medians.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = medians.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !(x1 > x0) {
        return Ok(None);
    }
    let xn: Vec<f64> = x.iter().map(|v| (v - x0) / (x1 - x0)).collect();
    let yn: Vec<f64> = medians.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let (y0, y1) = (yn[0], yn[yn.len() - 1]);
    let mut best: Option<(usize, f64)> = None;
    for k in 1..xn.len() - 1 {
        let chord = y0 + (y1 - y0) * xn[k];
        let gap = chord - yn[k];
        if best.is_none_or(|(_, g)| gap > g) {
            best = Some((k, gap));
        }
    }
    let Some((k, gap)) = best else { return Ok(None) };
    let first = medians[0];
    let decrease = if first > 0.0 { (first - medians[k]) / first } else { 0.0 };
    if gap >= rule.min_gap && decrease >= rule.min_decrease {
        Ok(Some(lambdas[k]))
    } else {
        Ok(None)
    }
}
