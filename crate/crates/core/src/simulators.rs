//! Simulator transforms `G(θ, z)`, noise banks and contaminated data generation.
//!
//! The reference measure for every built-in simulator is the standard normal in
//! `noise_dim` dimensions. A [`NoiseBank`] fixes `s` draws from it so that one
//! bank can be pushed through `G(θ, ·)` for many θ (common random numbers).

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::WeightedDiscreteMeasure;
use crate::rng::{derive_seed, rng_from_seed, SeedPurpose, StableRng};

/// Built-in simulator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `μ + σ z`, θ = (μ, σ).
    Normal,
    /// g-and-k quantile transform, θ = (a, b, g, k).
    Gandk,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Normal => "normal",
            ModelKind::Gandk => "gandk",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "normal" => Ok(ModelKind::Normal),
            "gandk" | "g-and-k" => Ok(ModelKind::Gandk),
            other => Err(Error::Config(format!("unknown simulator '{other}' (expected 'normal' or 'gandk')"))),
        }
    }

    pub fn param_dim(self) -> usize {
        match self {
            ModelKind::Normal => 2,
            ModelKind::Gandk => 4,
        }
    }

    /// Box bounds used in the reference experiments.
    pub fn default_bounds(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ModelKind::Normal => (vec![-10.0, 0.1], vec![10.0, 20.0]),
            ModelKind::Gandk => (vec![-10.0, 0.1, 0.03, 0.05], vec![10.0, 10.0, 40.0, 3.0]),
        }
    }

    /// Starting point used in the reference experiments.
    pub fn default_theta0(self) -> Vec<f64> {
        match self {
            ModelKind::Normal => vec![-5.0, 0.15],
            ModelKind::Gandk => vec![5.0, 0.15, 0.05, 0.05],
        }
    }

    #[inline]
    fn apply(self, theta: &[f64], z: f64) -> f64 {
        match self {
            ModelKind::Normal => normal_transform(theta[0], theta[1], z),
            ModelKind::Gandk => gandk_transform([theta[0], theta[1], theta[2], theta[3]], z),
        }
    }
}

/// A parametric simulator with box-bounded parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorSpec {
    pub kind: ModelKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SimulatorSpec {
    pub fn new(kind: ModelKind, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = kind.param_dim();
        if lower.len() != d || upper.len() != d {
            return Err(Error::Dimension { expected: d, found: lower.len().max(upper.len()) });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Precondition("parameter bounds need lower < upper coordinatewise".into()));
        }
        Ok(Self { kind, lower, upper })
    }

    /// Simulator with the reference bounds for its family.
    pub fn with_default_bounds(kind: ModelKind) -> Self {
        let (lower, upper) = kind.default_bounds();
        Self { kind, lower, upper }
    }

    pub fn normal() -> Self {
        Self::with_default_bounds(ModelKind::Normal)
    }

    pub fn gandk() -> Self {
        Self::with_default_bounds(ModelKind::Gandk)
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn param_dim(&self) -> usize {
        self.kind.param_dim()
    }

    pub fn noise_dim(&self) -> usize {
        1
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.param_dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *l <= *t && *t <= *u)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::Dimension { expected: self.param_dim(), found: theta.len() });
        }
        if !self.contains(theta) {
            return Err(Error::Precondition(format!(
                "θ = {theta:?} outside bounds {:?}..{:?}",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// `G(θ, z)` for a single noise vector.
    pub fn transform(&self, theta: &[f64], z: &[f64]) -> Vec<f64> {
        vec![self.kind.apply(theta, z[0])]
    }
}

/// `a + b (1 + 0.8 tanh(g z / 2)) z (1 + z²)^k`.
#[inline]
pub fn gandk_transform(theta: [f64; 4], z: f64) -> f64 {
    let [a, b, g, k] = theta;
    let skew = 1.0 + 0.8 * (g * z / 2.0).tanh();
    let kurt = z * (1.0 + z * z).powf(k);
    a + b * skew * kurt
}

#[inline]
pub fn normal_transform(mu: f64, sigma: f64, z: f64) -> f64 {
    mu + sigma * z
}

/// One Student-t draw as `Z / sqrt(V / ν)` with `Z` standard normal and `V ~ χ²(ν)`.
pub fn student_t_sample<R: Rng + ?Sized>(nu: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let v = ChiSquared::new(nu).expect("ν must be positive").sample(rng);
    z / (v / nu).sqrt()
}

/// `floor(x / ρ) ρ`.
#[inline]
pub fn discretize(x: f64, rho: f64) -> f64 {
    (x / rho).floor() * rho
}

/// Fixed draws `Z_1..Z_s` from the standard normal reference measure.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    seed: u64,
    dim: usize,
    draws: Vec<f64>,
}

impl NoiseBank {
    pub fn new(seed: u64, size: usize, dim: usize) -> Self {
        let mut rng = rng_from_seed(seed);
        let draws = (0..size * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { seed, dim, draws }
    }

    /// Bank sized for `spec`'s noise dimension.
    pub fn for_spec(spec: &SimulatorSpec, seed: u64, size: usize) -> Self {
        Self::new(seed, size, spec.noise_dim())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.draws.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }
}

/// `X_i = G(θ, Z_i)` for every draw in the bank, in order. Output is row-major
/// with `spec.output_dim()` coordinates per point.
pub fn simulate_batch(spec: &SimulatorSpec, theta: &[f64], bank: &NoiseBank) -> Result<Vec<f64>> {
    spec.check_theta(theta)?;
    if bank.dim() != spec.noise_dim() {
        return Err(Error::Dimension { expected: spec.noise_dim(), found: bank.dim() });
    }
    let kind = spec.kind;
    Ok(bank.draws.iter().map(|&z| kind.apply(theta, z)).collect())
}

/// Where the clean (1 − ε) part of a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanSource {
    /// A built-in simulator at a fixed parameter.
    Simulator { model: ModelKind, theta: Vec<f64> },
    /// Student-t with `nu` degrees of freedom.
    StudentT { nu: f64 },
}

impl CleanSource {
    fn validate(&self) -> Result<()> {
        match self {
            CleanSource::Simulator { model, theta } => {
                if theta.len() != model.param_dim() {
                    return Err(Error::Dimension { expected: model.param_dim(), found: theta.len() });
                }
                Ok(())
            }
            CleanSource::StudentT { nu } if *nu > 0.0 => Ok(()),
            CleanSource::StudentT { nu } => Err(Error::Precondition(format!("Student-t needs ν > 0, got {nu}"))),
        }
    }

    fn draw(&self, rng: &mut StableRng) -> f64 {
        match self {
            CleanSource::Simulator { model, theta } => {
                let z: f64 = StandardNormal.sample(rng);
                model.apply(theta, z)
            }
            CleanSource::StudentT { nu } => student_t_sample(*nu, rng),
        }
    }
}

/// The corrupting distribution `F`.
#[derive(Debug, Clone, PartialEq)]
pub enum Contaminant {
    Dirac(f64),
    Simulator { model: ModelKind, theta: Vec<f64> },
}

/// Huber mass `ε` of contaminant `F` plus an optional discretization of the clean
/// draws with cell width `ρ` (`ρ = 0` leaves them untouched).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContaminationJson", into = "ContaminationJson")]
pub struct ContaminationSpec {
    pub epsilon: f64,
    pub rho: f64,
    pub contaminant: Contaminant,
}

impl ContaminationSpec {
    pub fn new(epsilon: f64, rho: f64, contaminant: Contaminant) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Precondition(format!("ε must lie in [0, 1), got {epsilon}")));
        }
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::Precondition(format!("ρ must be finite and >= 0, got {rho}")));
        }
        if let Contaminant::Simulator { model, theta } = &contaminant {
            if theta.len() != model.param_dim() {
                return Err(Error::Dimension { expected: model.param_dim(), found: theta.len() });
            }
        }
        Ok(Self { epsilon, rho, contaminant })
    }

    /// No contamination at all.
    pub fn clean() -> Self {
        Self { epsilon: 0.0, rho: 0.0, contaminant: Contaminant::Dirac(0.0) }
    }

    fn draw_contaminant(&self, rng: &mut StableRng) -> f64 {
        match &self.contaminant {
            Contaminant::Dirac(x) => *x,
            Contaminant::Simulator { model, theta } => {
                let z: f64 = StandardNormal.sample(rng);
                model.apply(theta, z)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NestedSimulator {
    name: ModelKind,
    theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ContaminationJson {
    epsilon: f64,
    #[serde(default)]
    rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dirac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulator: Option<NestedSimulator>,
}

impl TryFrom<ContaminationJson> for ContaminationSpec {
    type Error = Error;

    fn try_from(j: ContaminationJson) -> Result<Self> {
        let contaminant = match (j.dirac, j.simulator) {
            (Some(x), None) => Contaminant::Dirac(x),
            (None, Some(s)) => Contaminant::Simulator { model: s.name, theta: s.theta },
            (None, None) if j.epsilon == 0.0 => Contaminant::Dirac(0.0),
            _ => {
                return Err(Error::Config(
                    "contamination needs exactly one of 'dirac' or 'simulator'".into(),
                ))
            }
        };
        ContaminationSpec::new(j.epsilon, j.rho, contaminant)
    }
}

impl From<ContaminationSpec> for ContaminationJson {
    fn from(c: ContaminationSpec) -> Self {
        let (dirac, simulator) = match c.contaminant {
            Contaminant::Dirac(x) => (Some(x), None),
            Contaminant::Simulator { model, theta } => (None, Some(NestedSimulator { name: model, theta })),
        };
        Self { epsilon: c.epsilon, rho: c.rho, dirac, simulator }
    }
}

/// Draws `n` observations: each one independently is a contaminant draw with
/// probability ε, otherwise a clean draw (discretized when ρ > 0). Indicator,
/// clean and contaminant randomness use three independent streams derived from
/// `seed`. Returns the uniform empirical measure.
pub fn generate_dataset(
    clean: &CleanSource,
    contamination: &ContaminationSpec,
    n: usize,
    seed: u64,
) -> Result<WeightedDiscreteMeasure> {
    if n == 0 {
        return Err(Error::Precondition("dataset size must be >= 1".into()));
    }
    clean.validate()?;
    let mut indicator = rng_from_seed(derive_seed(seed, 0, SeedPurpose::ContaminationIndicator));
    let mut clean_rng = rng_from_seed(derive_seed(seed, 0, SeedPurpose::CleanDraws));
    let mut contaminant_rng = rng_from_seed(derive_seed(seed, 0, SeedPurpose::ContaminantDraws));
    let values: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = indicator.random();
            if u < contamination.epsilon {
                contamination.draw_contaminant(&mut contaminant_rng)
            } else {
                let x = clean.draw(&mut clean_rng);
                if contamination.rho > 0.0 {
                    discretize(x, contamination.rho)
                } else {
                    x
                }
            }
        })
        .collect();
    WeightedDiscreteMeasure::from_values(&values)
}
