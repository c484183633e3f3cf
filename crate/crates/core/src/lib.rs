//! Robust simulation-based inference with the λ-robust semi-constrained
//! Wasserstein-2 divergence.
//!
//! The pipeline estimates parameters of a simulator `G(θ, z)` from contaminated
//! data by minimizing a KL-relaxed Wasserstein-2 divergence between the data's
//! empirical measure and the model:
//!
//! - [`measures`]: discrete measures, exact W2², KL, log-sum-exp and softmax.
//! - [`rsw`]: the semi-discrete dual objective, its stochastic sub-gradient ascent
//!   estimator, the reweighting it induces, and exact oracles used in testing.
//! - [`simulators`]: g-and-k and normal simulators, noise banks, contamination.
//! - [`cmaes`]: box-constrained CMA-ES for the outer minimization over θ.
//! - [`bootstrap`]: bootstrap replicates, medians and percentile intervals.
//! - [`lambda_select`]: the elbow diagnostic for choosing λ.
//! - [`mmd`]: Gaussian-kernel MMD and its large-bandwidth behaviour.
//! - [`config`]: the run configuration shared by the CLI.

pub mod bootstrap;
pub mod cmaes;
pub mod config;
pub mod error;
pub mod lambda_select;
pub mod measures;
pub mod mmd;
pub mod rng;
pub mod rsw;
pub mod simulators;

pub use error::{Error, Result};
pub use measures::{DualPotential, WeightedDiscreteMeasure};
