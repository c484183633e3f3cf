//! Box-constrained CMA-ES minimizer.
//!
//! Standard (μ/μ_w, K) evolution strategy with log-rank recombination weights,
//! cumulative step-size adaptation and rank-one plus rank-μ covariance updates.
//! Out-of-bounds samples are redrawn up to [`MAX_RESAMPLES`] times, then clipped
//! into the box with a quadratic penalty on the clipping distance.
//!
//! All randomness comes from one seeded stream consumed in a fixed order, and
//! candidate fitnesses are gathered before ranking, so the result does not
//! depend on whether candidates are evaluated serially or in parallel.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, StableRng};

pub const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaEsConfig {
    /// Population size `K`.
    pub population: usize,
    /// Number of generations `R`.
    pub rounds: usize,
    pub sigma0: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub theta0: Vec<f64>,
    pub seed: u64,
}

impl CmaEsConfig {
    /// `K = 16`, `R = 50`, `σ0 = 1`.
    pub fn new(theta0: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, seed: u64) -> Self {
        Self { population: 16, rounds: 50, sigma0: 1.0, lower, upper, theta0, seed }
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("CMA-ES needs at least one parameter".into()));
        }
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::Dimension { expected: d, found: self.lower.len().max(self.upper.len()) });
        }
        if self.population < 4 {
            return Err(Error::Config(format!("population must be >= 4, got {}", self.population)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("CMA-ES needs at least one round".into()));
        }
        if !(self.sigma0 > 0.0) || !self.sigma0.is_finite() {
            return Err(Error::Config(format!("sigma0 must be positive, got {}", self.sigma0)));
        }
        for k in 0..d {
            if !(self.lower[k] < self.upper[k]) {
                return Err(Error::Config(format!("bounds need lower < upper in coordinate {k}")));
            }
            if !(self.lower[k] <= self.theta0[k] && self.theta0[k] <= self.upper[k]) {
                return Err(Error::Config(format!("theta0[{k}] = {} lies outside its bounds", self.theta0[k])));
            }
        }
        Ok(())
    }
}

/// How the `K` objective calls of a generation are run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Evaluation {
    #[default]
    Serial,
    /// On the current rayon thread pool.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub mean: Vec<f64>,
    pub sigma: f64,
    /// Best raw objective value among this round's candidates.
    pub best_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaEsReport {
    pub best_theta: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<RoundRecord>,
    /// Candidates whose objective was not finite (ranked last).
    pub nonfinite_evaluations: usize,
    /// Times the covariance had to be reset to the identity.
    pub covariance_resets: usize,
    pub evaluations: usize,
}

impl CmaEsReport {
    /// Writes `round,best_value,sigma,mean_0..mean_{d-1}`.
    pub fn write_history_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let d = self.best_theta.len();
        let mut header = vec!["round".to_string(), "best_value".into(), "sigma".into()];
        header.extend((0..d).map(|k| format!("mean_{k}")));
        out.write_record(&header)?;
        for r in &self.history {
            let mut row = vec![r.round.to_string(), r.best_value.to_string(), r.sigma.to_string()];
            row.extend(r.mean.iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One sampled point: `sampled = mean + σ B D z` and its in-box version.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub sampled: Vec<f64>,
    pub feasible: Vec<f64>,
}

impl Candidate {
    pub fn clip_distance_sq(&self) -> f64 {
        self.sampled.iter().zip(&self.feasible).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Adaptation state of the search distribution.
#[derive(Debug, Clone)]
pub struct CmaEsState {
    dim: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: usize,
    resets: usize,
}

impl CmaEsState {
    pub fn new(config: &CmaEsConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim();
        let n = d as f64;
        let lambda = config.population;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| (lambda as f64 / 2.0 + 0.5).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Ok(Self {
            dim: d,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            lower: config.lower.clone(),
            upper: config.upper.clone(),
            mean: DVector::from_column_slice(&config.theta0),
            sigma: config.sigma0,
            cov: DMatrix::identity(d, d),
            basis: DMatrix::identity(d, d),
            scales: DVector::from_element(d, 1.0),
            p_sigma: DVector::zeros(d),
            p_c: DVector::zeros(d),
            generation: 0,
            resets: 0,
        })
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Overrides the step size (for tests and warm starts).
    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma;
    }

    fn in_bounds(&self, x: &DVector<f64>) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    fn draw(&self, rng: &mut StableRng) -> DVector<f64> {
        let z = DVector::from_iterator(self.dim, (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y = &self.basis * z.component_mul(&self.scales);
        &self.mean + self.sigma * y
    }

    /// `K` candidates from `Normal(mean, σ² C)`, each redrawn up to
    /// [`MAX_RESAMPLES`] times while outside the box and clipped afterwards.
    pub fn sample_generation(&self, rng: &mut StableRng) -> Vec<Candidate> {
        (0..self.lambda)
            .map(|_| {
                let mut x = self.draw(rng);
                for _ in 0..MAX_RESAMPLES {
                    if self.in_bounds(&x) {
                        break;
                    }
                    x = self.draw(rng);
                }
                let feasible: Vec<f64> = x
                    .iter()
                    .zip(self.lower.iter().zip(&self.upper))
                    .map(|(v, (l, u))| v.clamp(*l, *u))
                    .collect();
                Candidate { sampled: x.as_slice().to_vec(), feasible }
            })
            .collect()
    }

    /// Ranks candidates by `fitness` (lower is better, ties by position) and
    /// updates mean, paths, covariance and step size.
    pub fn update(&mut self, candidates: &[Candidate], fitness: &[f64]) {
        let d = self.dim;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order[..self.mu]
            .iter()
            .map(|&k| (DVector::from_column_slice(&candidates[k].feasible) - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(d);
        for (w, y) in self.weights.iter().zip(&steps) {
            y_w += *w * y;
        }
        self.mean = &old_mean + self.sigma * &y_w;

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let inv_sqrt = &self.basis * (self.basis.transpose() * &y_w).component_div(&self.scales);
        self.p_sigma = (1.0 - self.c_sigma) * &self.p_sigma
            + (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt() * inv_sqrt;
        self.generation += 1;
        let ps_norm = self.p_sigma.norm();
        let threshold = (1.4 + 2.0 / (d as f64 + 1.0)) * self.chi_n;
        let decay = (1.0 - (1.0 - self.c_sigma).powi(2 * self.generation as i32)).sqrt();
        let h_sigma = if ps_norm / decay < threshold { 1.0 } else { 0.0 };
        self.p_c = (1.0 - self.c_c) * &self.p_c + h_sigma * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::zeros(d, d);
        for (w, y) in self.weights.iter().zip(&steps) {
            rank_mu += *w * y * y.transpose();
        }
        let keep = 1.0 - self.c_1 - self.c_mu + (1.0 - h_sigma) * self.c_1 * self.c_c * (2.0 - self.c_c);
        self.cov = keep * &self.cov + self.c_1 * &self.p_c * self.p_c.transpose() + self.c_mu * rank_mu;

        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.refresh_eigen();
    }

    fn refresh_eigen(&mut self) {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let ok = eig.eigenvalues.iter().all(|v| v.is_finite() && *v > 0.0)
            && eig.eigenvectors.iter().all(|v| v.is_finite());
        if ok && self.sigma.is_finite() && self.sigma > 0.0 {
            self.cov = sym;
            self.scales = eig.eigenvalues.map(f64::sqrt);
            self.basis = eig.eigenvectors;
        } else {
            self.resets += 1;
            self.cov = DMatrix::identity(self.dim, self.dim);
            self.basis = DMatrix::identity(self.dim, self.dim);
            self.scales = DVector::from_element(self.dim, 1.0);
            self.p_c.fill(0.0);
            self.p_sigma.fill(0.0);
            if !(self.sigma.is_finite() && self.sigma > 0.0) {
                self.sigma = 1.0;
            }
        }
    }
}

/// Runs `config.rounds` generations and returns the best in-box point evaluated.
pub fn minimize<F>(objective: F, config: &CmaEsConfig, evaluation: Evaluation) -> Result<CmaEsReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut state = CmaEsState::new(config)?;
    let mut rng = rng_from_seed(config.seed);
    let mut best_theta = config.theta0.clone();
    let mut best_value = f64::INFINITY;
    let mut history = Vec::with_capacity(config.rounds);
    let mut nonfinite = 0;
    let mut evaluations = 0;

    for round in 0..config.rounds {
        let candidates = state.sample_generation(&mut rng);
        let values: Vec<f64> = match evaluation {
            Evaluation::Serial => candidates.iter().map(|c| objective(&c.feasible)).collect(),
            Evaluation::Parallel => candidates.par_iter().map(|c| objective(&c.feasible)).collect(),
        };
        evaluations += values.len();
        if values.iter().all(|v| !v.is_finite()) {
            return Err(Error::Optimizer(format!("every candidate in round {round} had a non-finite objective")));
        }
        let sigma = state.sigma();
        let fitness: Vec<f64> = candidates
            .iter()
            .zip(&values)
            .map(|(c, &v)| {
                if v.is_finite() {
                    v + c.clip_distance_sq() / sigma
                } else {
                    nonfinite += 1;
                    f64::INFINITY
                }
            })
            .collect();
        let mut round_best = f64::INFINITY;
        for (c, &v) in candidates.iter().zip(&values) {
            if v.is_finite() && v < round_best {
                round_best = v;
            }
            if v.is_finite() && v < best_value {
                best_value = v;
                best_theta = c.feasible.clone();
            }
        }
        state.update(&candidates, &fitness);
        history.push(RoundRecord { round: round + 1, mean: state.mean().to_vec(), sigma: state.sigma(), best_value: round_best });
    }
    Ok(CmaEsReport {
        best_theta,
        best_value,
        history,
        nonfinite_evaluations: nonfinite,
        covariance_resets: state.resets,
        evaluations,
    })
}
