//! Bootstrap estimation: resample the data, fit each resample by CMA-ES on the
//! SGA estimate of the divergence, and summarize the fitted parameters.
//!
//! Every replicate draws one noise bank before optimizing and reuses it for
//! every candidate θ, so each replicate's objective is a deterministic function
//! of θ. Seeds are derived from `(master_seed, replicate index, purpose)`, which
//! makes results independent of the number of worker threads.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmaes::{minimize, CmaEsConfig, Evaluation};
use crate::error::{Error, Result};
use crate::measures::{DualPotential, WeightedDiscreteMeasure};
use crate::rng::{derive_seed, rng_from_seed, SeedPurpose};
use crate::rsw::{sga_estimate, SgaConfig};
use crate::simulators::{simulate_batch, NoiseBank, SimulatorSpec};

/// Minimum fraction of replicates that must succeed for a run to be returned.
pub const MIN_SUCCESS_FRACTION: f64 = 0.9;

/// CMA-ES settings shared by every replicate; the seed comes from the replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub population: usize,
    pub rounds: usize,
    pub sigma0: f64,
    /// Starting point; `None` uses the simulator family's reference start.
    pub theta0: Option<Vec<f64>>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self { population: 16, rounds: 50, sigma0: 1.0, theta0: None }
    }
}

impl OptimizerSettings {
    pub fn cmaes_config(&self, spec: &SimulatorSpec, seed: u64) -> CmaEsConfig {
        let theta0 = self.theta0.clone().unwrap_or_else(|| spec.kind.default_theta0());
        CmaEsConfig {
            population: self.population,
            rounds: self.rounds,
            sigma0: self.sigma0,
            lower: spec.lower.clone(),
            upper: spec.upper.clone(),
            theta0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    /// Number of bootstrap replicates `M`.
    pub replicates: usize,
    pub lambda: f64,
    /// SGA settings; `iterations` is also the noise-bank size and `lambda` is
    /// overridden by the field above.
    pub sga: SgaConfig,
    pub optimizer: OptimizerSettings,
    pub master_seed: u64,
    /// Worker threads; 0 uses rayon's default.
    pub workers: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 100,
            lambda: 1.0,
            sga: SgaConfig::default(),
            optimizer: OptimizerSettings::default(),
            master_seed: 0,
            workers: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("at least one bootstrap replicate is required".into()));
        }
        self.sga_for(self.lambda).validate()
    }

    pub(crate) fn sga_for(&self, lambda: f64) -> SgaConfig {
        SgaConfig { lambda, record_trace: false, ..self.sga.clone() }
    }
}

/// Seeds used by one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateSeeds {
    pub index: usize,
    pub resample: u64,
    pub noise_bank: u64,
    pub optimizer: u64,
}

impl ReplicateSeeds {
    pub fn derive(master_seed: u64, index: usize) -> Self {
        let replicate = derive_seed(master_seed, index as u64, SeedPurpose::Replicate);
        Self {
            index,
            resample: derive_seed(master_seed, index as u64, SeedPurpose::Resample),
            noise_bank: derive_seed(replicate, 0, SeedPurpose::NoiseBank),
            optimizer: derive_seed(replicate, 0, SeedPurpose::Optimizer),
        }
    }
}

/// `n` atoms drawn uniformly with replacement, uniformly weighted.
pub fn resample_dataset(data: &WeightedDiscreteMeasure, seed: u64) -> Result<WeightedDiscreteMeasure> {
    if !data.is_uniform() {
        return Err(Error::Precondition("resampling expects a uniformly weighted dataset".into()));
    }
    let n = data.len();
    let m = data.dim();
    let mut rng = rng_from_seed(seed);
    let mut coords = Vec::with_capacity(n * m);
    for _ in 0..n {
        let j = rng.random_range(0..n);
        coords.extend_from_slice(data.atom(j));
    }
    WeightedDiscreteMeasure::uniform_flat(m, coords)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub g_final: DualPotential,
}

/// `θ ↦ SGA estimate of the divergence between `data` and the model pushed
/// through `bank``. Out-of-box or failing evaluations return NaN.
pub fn divergence_objective<'a>(
    data: &'a WeightedDiscreteMeasure,
    spec: &'a SimulatorSpec,
    bank: &'a NoiseBank,
    sga: &'a SgaConfig,
) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    move |theta: &[f64]| {
        simulate_batch(spec, theta, bank)
            .and_then(|x| sga_estimate(data, &x, sga))
            .map(|r| r.estimate)
            .unwrap_or(f64::NAN)
    }
}

/// Minimizes the divergence over θ with CMA-ES using a fixed noise bank, then
/// reruns SGA at the best θ (same bank) to obtain its final potential.
pub fn fit_with_bank(
    data: &WeightedDiscreteMeasure,
    spec: &SimulatorSpec,
    bank: &NoiseBank,
    sga: &SgaConfig,
    cmaes: &CmaEsConfig,
    evaluation: Evaluation,
) -> Result<ReplicateFit> {
    if bank.len() != sga.iterations {
        return Err(Error::Config(format!(
            "noise bank holds {} draws but SGA runs {} iterations",
            bank.len(),
            sga.iterations
        )));
    }
    let objective = divergence_objective(data, spec, bank, sga);
    let report = minimize(&objective, cmaes, evaluation)?;
    let samples = simulate_batch(spec, &report.best_theta, bank)?;
    let concluding = sga_estimate(data, &samples, sga)?;
    Ok(ReplicateFit { theta: report.best_theta, loss: report.best_value, g_final: concluding.final_potential })
}

/// One bootstrap replicate on an already resampled dataset.
pub fn fit_one_replicate(
    data_resampled: &WeightedDiscreteMeasure,
    spec: &SimulatorSpec,
    config: &BootstrapConfig,
    seeds: &ReplicateSeeds,
) -> Result<ReplicateFit> {
    config.validate()?;
    let sga = config.sga_for(config.lambda);
    let bank = NoiseBank::for_spec(spec, seeds.noise_bank, sga.iterations);
    let cmaes = config.optimizer.cmaes_config(spec, seeds.optimizer);
    fit_with_bank(data_resampled, spec, &bank, &sga, &cmaes, Evaluation::Parallel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Fitted parameters of the successful replicates, in replicate order.
    pub samples: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub potentials: Vec<DualPotential>,
    pub seeds: Vec<ReplicateSeeds>,
    pub failures: Vec<ReplicateFailure>,
}

impl BootstrapResult {
    /// One row per successful replicate: `index,theta_0..theta_{d-1},loss`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let d = self.samples.first().map_or(0, Vec::len);
        let mut header = vec!["index".to_string()];
        header.extend((0..d).map(|k| format!("theta_{k}")));
        header.push("loss".into());
        out.write_record(&header)?;
        for ((theta, loss), seeds) in self.samples.iter().zip(&self.losses).zip(&self.seeds) {
            let mut row = vec![seeds.index.to_string()];
            row.extend(theta.iter().map(f64::to_string));
            row.push(loss.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs `f` on a pool with `workers` threads (rayon's default when 0).
pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Splits per-task outcomes into successes and failures and applies the
/// success threshold.
pub(crate) fn collect_outcomes<T>(outcomes: Vec<(usize, Result<T>)>) -> Result<(Vec<(usize, T)>, Vec<ReplicateFailure>)> {
    let total = outcomes.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = Vec::new();
    let mut first_error = None;
    for (index, outcome) in outcomes {
        match outcome {
            Ok(v) => ok.push((index, v)),
            Err(e) => {
                failed.push(ReplicateFailure { index, message: e.to_string() });
                first_error.get_or_insert((index, e));
            }
        }
    }
    if (ok.len() as f64) < MIN_SUCCESS_FRACTION * total as f64 {
        let (index, source) = first_error.expect("some task failed");
        return Err(Error::Replicate { index, source: Box::new(source) });
    }
    Ok((ok, failed))
}

/// `M` independent replicates, run concurrently on `config.workers` threads.
pub fn run_bootstrap(
    data: &WeightedDiscreteMeasure,
    spec: &SimulatorSpec,
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    config.validate()?;
    let outcomes = with_workers(config.workers, || {
        (0..config.replicates)
            .into_par_iter()
            .map(|index| {
                let seeds = ReplicateSeeds::derive(config.master_seed, index);
                let fit = resample_dataset(data, seeds.resample)
                    .and_then(|resampled| fit_one_replicate(&resampled, spec, config, &seeds));
                (index, fit.map(|f| (seeds, f)))
            })
            .collect::<Vec<_>>()
    })?;
    let (ok, failures) = collect_outcomes(outcomes)?;
    let mut result = BootstrapResult {
        samples: Vec::with_capacity(ok.len()),
        losses: Vec::with_capacity(ok.len()),
        potentials: Vec::with_capacity(ok.len()),
        seeds: Vec::with_capacity(ok.len()),
        failures,
    };
    for (_, (seeds, fit)) in ok {
        result.samples.push(fit.theta);
        result.losses.push(fit.loss);
        result.potentials.push(fit.g_final);
        result.seeds.push(seeds);
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub alpha: f64,
    pub medians: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    pub widths: Vec<f64>,
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `(N - 1) p` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-coordinate medians and `[α/2, 1 - α/2]` percentile intervals.
pub fn summarize(result: &BootstrapResult, alpha: f64) -> Result<BootstrapSummary> {
    summarize_samples(&result.samples, alpha)
}

pub fn summarize_samples(samples: &[Vec<f64>], alpha: f64) -> Result<BootstrapSummary> {
    if samples.len() < 2 {
        return Err(Error::Size(format!("need at least 2 bootstrap samples, got {}", samples.len())));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Precondition(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let d = samples[0].len();
    let mut medians = Vec::with_capacity(d);
    let mut intervals = Vec::with_capacity(d);
    for k in 0..d {
        let mut column: Vec<f64> = samples.iter().map(|row| row[k]).collect();
        column.sort_by(f64::total_cmp);
        medians.push(quantile_sorted(&column, 0.5));
        intervals.push((quantile_sorted(&column, alpha / 2.0), quantile_sorted(&column, 1.0 - alpha / 2.0)));
    }
    let widths = intervals.iter().map(|(a, b)| b - a).collect();
    Ok(BootstrapSummary { alpha, medians, intervals, widths })
}
