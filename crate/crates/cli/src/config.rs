//! Run configuration: a strict TOML document.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! name = "porous_medium"
//! m = 2.0
//! mobility = "self_consistent"
//! drift = "tanh_well"
//!
//! [grid]
//! cells = 512
//!
//! [time]
//! t_end = 0.05
//! h = 5e-4
//! ```
//!
//! Every table is optional except `[model]`, and every key except
//! `model.name` has a default. Unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use nfpe::coefficients::{CoefficientSet, DriftField, MonotoneCubic, Mobility};
use nfpe::mckean::{BandwidthRule, SdeConfig};
use nfpe::resolvent::ResolventConfig;
use nfpe::{Boundary, GridSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing required keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("line {line}: unknown key '{key}'{}", hint.as_ref().map(|h| format!(" (did you mean '{h}'?)")).unwrap_or_default())]
    UnknownKey { line: usize, key: String, hint: Option<String> },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid value for '{key}': {msg}")]
    Invalid { key: String, msg: String },
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityKind {
    Zero,
    Constant,
    SelfConsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Zero,
    Constant,
    TanhWell,
    Linear,
}

pub const MODEL_NAMES: [&str; 5] = ["heat", "porous_medium", "bose_einstein", "power_law", "custom"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    /// Porous medium exponent.
    #[serde(default = "default_m")]
    pub m: f64,
    /// Prefactor of `bose_einstein` and `power_law`.
    #[serde(default = "one")]
    pub a: f64,
    /// Exponent of `power_law`.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Knot table `r,beta,beta_prime` for `custom`, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default = "default_mobility")]
    pub mobility: MobilityKind,
    #[serde(default = "one")]
    pub mobility_value: f64,
    #[serde(default = "default_drift")]
    pub drift: DriftKind,
    #[serde(default = "one")]
    pub drift_strength: f64,
    #[serde(default = "default_vector")]
    pub drift_vector: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<f64>,
}

fn default_m() -> f64 {
    2.0
}
fn default_p() -> f64 {
    3.0
}
fn one() -> f64 {
    1.0
}
fn default_mobility() -> MobilityKind {
    MobilityKind::Zero
}
fn default_drift() -> DriftKind {
    DriftKind::Zero
}
fn default_vector() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub half_width: f64,
    pub cells: usize,
    pub boundary: Boundary,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dim: 1, half_width: 8.0, cells: 256, boundary: Boundary::NoFlux }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub h: f64,
    /// Store every `stride`-th state.
    pub stride: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t_end: 0.1, h: 1e-3, stride: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Gaussian,
    Barenblatt,
    Uniform,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub mean: [f64; 2],
    pub sigma: f64,
    /// Barenblatt exponent and time offset.
    pub m: f64,
    pub t0: f64,
    /// CSV or binary field for `file`, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { kind: InitialKind::Gaussian, mean: [0.0, 0.0], sigma: 0.5, m: 2.0, t0: 0.01, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSection {
    pub n_particles: usize,
    pub dt: f64,
    pub bandwidth_rule: BandwidthRule,
    pub reflect_at_boundary: bool,
    pub snapshot_stride: usize,
    /// Run the interacting mode with this many rounds instead of the
    /// linearized one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_consistent_rounds: Option<usize>,
}

impl Default for SdeSection {
    fn default() -> Self {
        let d = SdeConfig::default();
        Self {
            n_particles: d.n_particles,
            dt: d.dt,
            bandwidth_rule: d.bandwidth_rule,
            reflect_at_boundary: d.reflect_at_boundary,
            snapshot_stride: d.snapshot_stride,
            self_consistent_rounds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    pub formats: Vec<Format>,
    /// Write every `particle_stride`-th particle in position snapshots.
    pub particle_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, formats: vec![Format::Csv], particle_stride: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub n_list: Vec<usize>,
    /// Horizon of the study; defaults to `time.t_end`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { n_list: vec![8, 16, 32, 64, 128], t: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub resolvent: ResolventConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde: Option<SdeSection>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    /// Directory relative paths in the document resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn nearest<'a>(key: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<String> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(key, c), c))
        .filter(|(d, c)| *d <= 2.max(c.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c.to_string())
}

/// Turns a deserializer error into a line-addressed [`ConfigError`].
fn translate(text: &str, err: toml::de::Error) -> ConfigError {
    let line = err.span().map(|s| line_of(text, s.start)).unwrap_or(0);
    let msg = err.message().to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        let key = rest.split('`').next().unwrap_or("").to_string();
        let expected: Vec<&str> = rest.split('`').skip(2).step_by(2).collect();
        let hint = nearest(&key, expected);
        return ConfigError::UnknownKey { line, key, hint };
    }
    if let Some(rest) = msg.strip_prefix("unknown variant `") {
        let value = rest.split('`').next().unwrap_or("").to_string();
        let expected: Vec<&str> = rest.split('`').skip(2).step_by(2).collect();
        let hint = nearest(&value, expected.iter().copied());
        let msg = format!(
            "unknown value '{value}', expected one of {}{}",
            expected.join(", "),
            hint.map(|h| format!(" (did you mean '{h}'?)")).unwrap_or_default()
        );
        return ConfigError::Syntax { line, msg };
    }
    ConfigError::Syntax { line, msg }
}

/// Parses and validates a configuration document. Relative paths are
/// resolved against `base_dir`.
pub fn parse_config_in(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message();
        if msg.starts_with("missing field `model`") || msg.starts_with("missing field `name`") {
            ConfigError::MissingKeys(vec!["model.name".into()])
        } else {
            translate(text, e)
        }
    })?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_in(text, Path::new("."))
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    parse_config_in(&text, path.parent().unwrap_or(Path::new(".")))
}

/// The effective configuration as a TOML document.
pub fn emit(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("configuration serializes to TOML")
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), msg: msg.into() }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !MODEL_NAMES.contains(&self.model.name.as_str()) {
            let hint = nearest(&self.model.name, MODEL_NAMES);
            return Err(invalid(
                "model.name",
                format!(
                    "unknown model '{}', expected one of {}{}",
                    self.model.name,
                    MODEL_NAMES.join(", "),
                    hint.map(|h| format!(" (did you mean '{h}'?)")).unwrap_or_default()
                ),
            ));
        }
        self.grid_spec()?;
        self.coefficients()?;
        self.resolvent.validate().map_err(|e| invalid("resolvent", e.to_string()))?;
        if !(self.time.t_end > 0.0) || !(self.time.h > 0.0) || self.time.h > self.time.t_end {
            return Err(invalid("time", "need t_end > 0 and 0 < h <= t_end"));
        }
        if self.time.stride == 0 {
            return Err(invalid("time.stride", "must be at least 1"));
        }
        if self.initial.kind == InitialKind::File && self.initial.path.is_none() {
            return Err(invalid("initial.path", "required when initial.kind = \"file\""));
        }
        if !(self.initial.sigma > 0.0) {
            return Err(invalid("initial.sigma", "must be positive"));
        }
        if let Some(s) = &self.sde {
            self.sde_config_with(s, self.seed).validate().map_err(|e| invalid("sde", e.to_string()))?;
        }
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats", "need at least one format"));
        }
        if self.output.particle_stride == 0 {
            return Err(invalid("output.particle_stride", "must be at least 1"));
        }
        let nl = &self.convergence.n_list;
        if nl.is_empty() || nl[0] == 0 || nl.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("convergence.n_list", "must be increasing with entries >= 1"));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.grid.dim, self.grid.half_width, self.grid.cells, self.grid.boundary)
            .map_err(|e| invalid("grid", e.to_string()))
    }

    pub fn resolve_path(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn coefficients(&self) -> Result<CoefficientSet, ConfigError> {
        let m = &self.model;
        let bad = |e: nfpe::coefficients::CoefficientError| invalid("model", e.to_string());
        let base = match m.name.as_str() {
            "heat" => CoefficientSet::heat(),
            "porous_medium" => CoefficientSet::porous_medium(m.m).map_err(bad)?,
            "bose_einstein" => CoefficientSet::bose_einstein(m.a).map_err(bad)?,
            "power_law" => CoefficientSet::power_law(m.a, m.p).map_err(bad)?,
            _ => {
                let rel = m.table.as_ref().ok_or_else(|| invalid("model.table", "required for the custom model"))?;
                let path = self.resolve_path(rel);
                let file = fs::File::open(&path)
                    .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
                CoefficientSet::tabulated("custom", MonotoneCubic::from_csv(file).map_err(bad)?)
            }
        };
        let mobility = match m.mobility {
            MobilityKind::Zero => Mobility::Zero,
            MobilityKind::Constant => {
                if !(m.mobility_value >= 0.0) {
                    return Err(invalid("model.mobility_value", "must be nonnegative"));
                }
                Mobility::Constant(m.mobility_value)
            }
            MobilityKind::SelfConsistent => Mobility::SelfConsistent,
        };
        let drift = match m.drift {
            DriftKind::Zero => DriftField::Zero,
            DriftKind::Constant => DriftField::Constant(m.drift_vector),
            DriftKind::TanhWell => DriftField::TanhWell { strength: m.drift_strength },
            DriftKind::Linear => DriftField::Linear { strength: m.drift_strength },
        };
        let mut c = base.with_mobility(mobility).with_drift(drift);
        if m.alpha1.is_some() {
            c.alpha1 = m.alpha1;
        }
        if m.alpha2.is_some() {
            c.alpha2 = m.alpha2;
        }
        Ok(c)
    }

    fn sde_config_with(&self, s: &SdeSection, seed: u64) -> SdeConfig {
        SdeConfig {
            n_particles: s.n_particles,
            dt: s.dt,
            seed,
            bandwidth_rule: s.bandwidth_rule,
            reflect_at_boundary: s.reflect_at_boundary,
            snapshot_stride: s.snapshot_stride,
        }
    }

    /// The `[sde]` section (or its defaults) with the run seed.
    pub fn sde_config(&self) -> SdeConfig {
        self.sde_config_with(&self.sde.clone().unwrap_or_default(), self.seed)
    }
}
