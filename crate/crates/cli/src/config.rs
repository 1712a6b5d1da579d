//! Experiment configuration: one TOML file, unknown keys rejected.
//!
//! Every validation message starts with the dotted config path it refers
//! to, for example `sim.step: must be positive`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use switchjump::engine::{RecordMode, SimConfig, DEFAULT_EXPLOSION_GUARD};
use switchjump::switching::Mechanism;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    ConstructionEquivalence,
    CouplingContraction,
    IsIdentity,
    DriftCheck,
    DecayFit,
}

impl ExperimentKind {
    pub fn key(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::ConstructionEquivalence => "construction_equivalence",
            ExperimentKind::CouplingContraction => "coupling_contraction",
            ExperimentKind::IsIdentity => "is_identity",
            ExperimentKind::DriftCheck => "drift_check",
            ExperimentKind::DecayFit => "decay_fit",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub construction_equivalence: Option<ConstructionParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_contraction: Option<CouplingParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub is_identity: Option<IsIdentityParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_check: Option<DriftParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_fit: Option<DecayParams>,
}

/// Catalog name plus optional parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regimes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upward_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub step: f64,
    pub horizon: f64,
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    #[serde(default = "default_record")]
    pub record: RecordMode,
    #[serde(default)]
    pub observe: Vec<f64>,
    #[serde(default = "default_guard")]
    pub explosion_guard: f64,
}

fn default_mechanism() -> Mechanism {
    Mechanism::Skorokhod
}

fn default_record() -> RecordMode {
    RecordMode::EventLog
}

fn default_guard() -> f64 {
    DEFAULT_EXPLOSION_GUARD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub x0: Vec<f64>,
    pub k0: usize,
    #[serde(default = "one")]
    pub paths: usize,
}

fn one() -> usize {
    1
}

/// Frozen straight-line path `x1(t) = x1(0) + t x2(0)`, `x2(t) = x2(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionParams {
    pub x0: Vec<f64>,
    pub k0: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_check_times")]
    pub check_times: Vec<f64>,
    #[serde(default = "default_ks_max")]
    pub ks_max: f64,
    #[serde(default = "default_p_min")]
    pub chi2_p_min: f64,
    #[serde(default = "default_survival_tol")]
    pub survival_tol: f64,
}

fn default_samples() -> usize {
    100_000
}

fn default_check_times() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 3.0]
}

fn default_ks_max() -> f64 {
    0.02
}

fn default_p_min() -> f64 {
    0.01
}

fn default_survival_tol() -> f64 {
    0.015
}

/// Coupled runs from `x0` and `x0 + s (y0 - x0)` for each scale `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingParams {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub k0: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
}

fn default_runs() -> usize {
    10_000
}

fn default_scales() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsIdentityParams {
    pub x0: Vec<f64>,
    pub k0: usize,
    #[serde(default = "default_runs")]
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftParams {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Fitted from the probes inside the compact set when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_half_width() -> f64 {
    10.0
}

fn default_points() -> usize {
    21
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormFunction {
    /// `f = 1`: total variation.
    #[default]
    One,
    /// `f = V + 1` with the model's Lyapunov function.
    LyapunovPlusOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayParams {
    pub x0: Vec<f64>,
    pub k0: usize,
    pub y0: Vec<f64>,
    pub l0: usize,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default = "default_decay_paths")]
    pub paths: usize,
    #[serde(default = "default_per_axis")]
    pub bins_per_axis: usize,
    #[serde(default = "default_tail")]
    pub tail: f64,
    #[serde(default)]
    pub f: NormFunction,
}

fn default_times() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0, 5.0]
}

fn default_decay_paths() -> usize {
    20_000
}

fn default_per_axis() -> usize {
    8
}

fn default_tail() -> f64 {
    0.005
}

/// Parses TOML text, reporting the config path of the first bad key.
pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {}", e.message())))?;
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "config".to_string() } else { path };
        CliError::Validation(format!("{path}: {}", e.into_inner().message()))
    })
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("config: cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub(crate) fn invalid(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    pub fn experiment(&self) -> Result<ExperimentKind, CliError> {
        self.experiment.ok_or_else(|| invalid("experiment", "missing"))
    }

    pub fn model(&self) -> Result<&ModelConfig, CliError> {
        self.model.as_ref().ok_or_else(|| invalid("model", "missing"))
    }

    /// Engine configuration rooted at the resolved seed.
    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let s = self.sim.as_ref().ok_or_else(|| invalid("sim", "missing"))?;
        let mut c = SimConfig::new(s.step, s.horizon, self.seed.unwrap_or(0))
            .with_mechanism(s.mechanism)
            .with_record(s.record)
            .with_observe(s.observe.clone());
        c.explosion_guard = s.explosion_guard;
        c.validate().map_err(|e| invalid("sim", e))?;
        Ok(c)
    }

    pub(crate) fn section<'a, T>(&self, value: &'a Option<T>) -> Result<&'a T, CliError> {
        let key = self.experiment()?.key();
        value.as_ref().ok_or_else(|| invalid(key, "missing"))
    }
}
