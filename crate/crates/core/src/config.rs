//! Single JSON run configuration holding every tuning parameter. Omitted
//! fields take the defaults below.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{BootstrapConfig, OptimizerSettings};
use crate::error::{Error, Result};
use crate::lambda_select::{default_grid, LambdaGrid, SelectionRule};
use crate::rsw::SgaConfig;
use crate::simulators::{CleanSource, Contaminant, ContaminationSpec, ModelKind, SimulatorSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Model family plus optional overrides of its box bounds and starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    pub name: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self { name: ModelKind::Gandk, lower: None, upper: None, theta0: None }
    }
}

impl SimulatorConfig {
    pub fn spec(&self) -> Result<SimulatorSpec> {
        let (lo, hi) = self.name.default_bounds();
        SimulatorSpec::new(self.name, self.lower.clone().unwrap_or(lo), self.upper.clone().unwrap_or(hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Generate {
        clean: CleanSource,
        contamination: ContaminationSpec,
        n: usize,
        /// Dataset seed; `None` derives it from the master seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv { path: PathBuf },
}

impl Default for DatasetSource {
    /// Discretized g-and-k at (3, 1, 2, 0.5) with 5% of the mass at 50.
    fn default() -> Self {
        DatasetSource::Generate {
            clean: CleanSource::Simulator { model: ModelKind::Gandk, theta: vec![3.0, 1.0, 2.0, 0.5] },
            contamination: ContaminationSpec { epsilon: 0.05, rho: 0.05, contaminant: Contaminant::Dirac(50.0) },
            n: 1000,
            seed: None,
        }
    }
}

/// Either an explicit λ or `"auto"`, which reads the latest selection manifest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    Auto,
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Fixed(1.0)
    }
}

impl fmt::Display for LambdaChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaChoice::Fixed(v) => write!(f, "{v}"),
            LambdaChoice::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for LambdaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaChoice::Auto);
        }
        let v: f64 = s.parse().map_err(|_| Error::Config(format!("λ must be a number or 'auto', got '{s}'")))?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Config(format!("λ must be positive and finite, got {v}")));
        }
        Ok(LambdaChoice::Fixed(v))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaJson {
    Number(f64),
    Text(String),
}

impl Serialize for LambdaChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LambdaChoice::Fixed(v) => LambdaJson::Number(*v),
            LambdaChoice::Auto => LambdaJson::Text("auto".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LambdaChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match LambdaJson::deserialize(d)? {
            LambdaJson::Number(v) => v.to_string().parse(),
            LambdaJson::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub replicates: usize,
    /// Two-sided level of the percentile intervals.
    pub alpha: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { replicates: 100, alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    pub replicates: usize,
    pub grid: LambdaGrid,
    pub rule: SelectionRule,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self {
            replicates: 15,
            grid: default_grid(),
            rule: SelectionRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MmdSamples {
    /// Two single-column CSV files.
    Files { x: PathBuf, y: PathBuf },
    Generate { x: CleanSource, y: CleanSource, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmdSettings {
    pub sigmas: Vec<f64>,
    pub samples: MmdSamples,
}

impl Default for MmdSettings {
    fn default() -> Self {
        Self {
            sigmas: vec![10.0, 100.0, 1000.0],
            samples: MmdSamples::Generate {
                x: CleanSource::Simulator { model: ModelKind::Normal, theta: vec![0.0, 1.0] },
                y: CleanSource::Simulator { model: ModelKind::Normal, theta: vec![2.0, 1.0] },
                n: 10_000,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub simulator: SimulatorConfig,
    pub dataset: DatasetSource,
    pub lambda: LambdaChoice,
    pub sga: SgaConfig,
    pub optimizer: OptimizerSettings,
    pub bootstrap: BootstrapSettings,
    pub lambda_selection: SelectionSettings,
    pub mmd: MmdSettings,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses one per logical core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            simulator: SimulatorConfig::default(),
            dataset: DatasetSource::default(),
            lambda: LambdaChoice::default(),
            sga: SgaConfig::default(),
            optimizer: OptimizerSettings::default(),
            bootstrap: BootstrapSettings::default(),
            lambda_selection: SelectionSettings::default(),
            mmd: MmdSettings::default(),
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let spec = self.simulator.spec()?;
        if let Some(theta0) = self.optimizer.theta0.as_ref().or(self.simulator.theta0.as_ref()) {
            if !spec.contains(theta0) {
                return Err(Error::Config(format!("starting point {theta0:?} lies outside the bounds")));
            }
        }
        if let DatasetSource::Generate { n: 0, .. } = self.dataset {
            return Err(Error::Config("dataset.n must be >= 1".into()));
        }
        if !(self.bootstrap.alpha > 0.0 && self.bootstrap.alpha < 1.0) {
            return Err(Error::Config(format!("bootstrap.alpha must lie in (0, 1), got {}", self.bootstrap.alpha)));
        }
        if self.lambda_selection.grid.is_empty() {
            return Err(Error::Config("lambda_selection.grid must not be empty".into()));
        }
        let lambda = match self.lambda {
            LambdaChoice::Fixed(v) => v,
            LambdaChoice::Auto => 1.0,
        };
        self.bootstrap_config(lambda).validate()
    }

    pub fn dataset_seed(&self) -> u64 {
        match self.dataset {
            DatasetSource::Generate { seed: Some(s), .. } => s,
            _ => crate::rng::derive_seed(self.master_seed, 0, crate::rng::SeedPurpose::Dataset),
        }
    }

    pub fn optimizer_settings(&self) -> OptimizerSettings {
        let mut settings = self.optimizer.clone();
        if settings.theta0.is_none() {
            settings.theta0 = self.simulator.theta0.clone();
        }
        settings
    }

    pub fn bootstrap_config(&self, lambda: f64) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.bootstrap.replicates,
            lambda,
            sga: self.sga.clone(),
            optimizer: self.optimizer_settings(),
            master_seed: self.master_seed,
            workers: self.workers,
        }
    }
}
