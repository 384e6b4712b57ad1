//! Run configuration (TOML) and its validation.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use pvcurtail_core::mprt::{Method, MprtConfig, MprtError};
use pvcurtail_core::plant::{PlantError, PlantParams};
use pvcurtail_core::pv_array::{extract_params, ModuleDatasheet, PvArrayParams, PvError};
use pvcurtail_core::scenario::{Fidelity, ScenarioError, ScenarioSpec};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("plant: {0}")]
    Plant(#[from] PlantError),
    #[error("array: {0}")]
    Pv(#[from] PvError),
    #[error("method `{label}`: {source}")]
    Mprt {
        label: String,
        #[source]
        source: MprtError,
    },
}

pub(crate) fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub datasheet: ModuleDatasheet,
    pub n_series: u32,
    pub n_parallel: u32,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            datasheet: ModuleDatasheet::cs6p_250p(),
            n_series: 16,
            n_parallel: 153,
        }
    }
}

impl ArrayConfig {
    pub fn build(&self) -> Result<PvArrayParams, PvError> {
        extract_params(&self.datasheet, self.n_series, self.n_parallel)
    }
}

/// One controller under test: a label plus the controller tunables, written
/// flat in the same TOML table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodEntry {
    pub label: String,
    #[serde(flatten)]
    pub mprt: MprtConfig,
}

impl<'de> Deserialize<'de> for MethodEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut table = toml::Table::deserialize(d)?;
        let label = match table.remove("label") {
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err(D::Error::custom("`label` must be a string")),
            None => return Err(D::Error::missing_field("label")),
        };
        // Round-trip through a table so unknown keys are still rejected.
        let mprt = MprtConfig::deserialize(toml::Value::Table(table)).map_err(D::Error::custom)?;
        Ok(Self { label, mprt })
    }
}

impl MethodEntry {
    pub fn new(method: Method) -> Self {
        Self {
            label: format!("m{}", method.number()),
            mprt: MprtConfig::with_method(method),
        }
    }
}

fn default_methods() -> Vec<MethodEntry> {
    vec![MethodEntry::new(Method::Proposed)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub dt_full: f64,
    pub dt_reduced: f64,
    pub trace_period: f64,
    /// Initial dc-link voltage; defaults to the point right of the MPP where
    /// the array meets the reference at t = 0.
    pub v_dc_start: Option<f64>,
    /// Reactive power reference, var (full fidelity only).
    pub q_ref: f64,
    pub bin_edges: Vec<f64>,
    /// Excess above the reference that counts as overshoot time, W.
    pub overshoot_deadband: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt_full: 100e-6,
            dt_reduced: 1e-3,
            trace_period: 0.1,
            v_dc_start: None,
            q_ref: 0.0,
            bin_edges: vec![450.0, 500.0],
            overshoot_deadband: 1e3,
        }
    }
}

impl SimulationConfig {
    pub fn dt(&self, fidelity: Fidelity) -> f64 {
        match fidelity {
            Fidelity::Full => self.dt_full,
            Fidelity::Reduced => self.dt_reduced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub traces: bool,
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            traces: true,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub array: ArrayConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// True when `period` is an integer multiple of `dt` (to 1e-9 relative).
fn is_multiple(period: f64, dt: f64) -> bool {
    let n = (period / dt).round();
    n >= 1.0 && (n * dt - period).abs() <= 1e-9 * period
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Toml {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        use pvcurtail_core::scenario::{IrradianceSource, ReferenceRecipe, RegulationSource};
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let IrradianceSource::File { path } = &mut self.scenario.irradiance {
            fix(path);
        }
        if let ReferenceRecipe::Regulated {
            regulation: RegulationSource::File { path },
            ..
        } = &mut self.scenario.reference
        {
            fix(path);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate()?;
        self.plant.validate()?;
        self.array.datasheet.validate()?;
        if self.array.n_series < 1 || self.array.n_parallel < 1 {
            return Err(invalid(
                "array",
                "n_series and n_parallel must be at least 1",
            ));
        }
        let sim = &self.simulation;
        for (field, dt, max) in [
            (
                "simulation.dt_full",
                sim.dt_full,
                pvcurtail_core::plant::MAX_DT_FULL,
            ),
            (
                "simulation.dt_reduced",
                sim.dt_reduced,
                pvcurtail_core::plant::MAX_DT_REDUCED,
            ),
        ] {
            if !(dt > 0.0 && dt <= max) {
                return Err(invalid(field, format!("must be in (0, {max}] s")));
            }
        }
        let dt = sim.dt(self.scenario.fidelity);
        if !is_multiple(sim.trace_period, dt) {
            return Err(invalid(
                "simulation.trace_period",
                format!("{} s is not a multiple of dt = {dt} s", sim.trace_period),
            ));
        }
        if !is_multiple(self.scenario.duration, dt) {
            return Err(invalid(
                "scenario.duration",
                format!(
                    "{} s is not a multiple of dt = {dt} s",
                    self.scenario.duration
                ),
            ));
        }
        if sim.bin_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(
                "simulation.bin_edges",
                "must be strictly increasing",
            ));
        }
        if !(sim.overshoot_deadband >= 0.0) {
            return Err(invalid(
                "simulation.overshoot_deadband",
                "must be non-negative",
            ));
        }
        if let Some(v) = sim.v_dc_start {
            if !(v >= self.plant.vdc_min) {
                return Err(invalid("simulation.v_dc_start", "below plant vdc_min"));
            }
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "at least one method is required"));
        }
        let mut seen = HashSet::new();
        for m in &self.methods {
            if m.label.is_empty()
                || !m
                    .label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(invalid(
                    "methods.label",
                    format!("`{}` must be non-empty and use only [A-Za-z0-9_-]", m.label),
                ));
            }
            if !seen.insert(m.label.as_str()) {
                return Err(invalid(
                    "methods.label",
                    format!("duplicate label `{}`", m.label),
                ));
            }
            m.mprt.validate().map_err(|source| ConfigError::Mprt {
                label: m.label.clone(),
                source,
            })?;
            if !is_multiple(m.mprt.period(), dt) {
                return Err(invalid(
                    "methods.f_sample",
                    format!(
                        "`{}`: sample period {} s is not a multiple of dt = {dt} s",
                        m.label,
                        m.mprt.period()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Replaces the method list with the three methods, keeping the first
    /// entry's tunables.
    pub fn expand_to_all_methods(&mut self) {
        let base = self
            .methods
            .first()
            .map(|m| m.mprt.clone())
            .unwrap_or_default();
        self.methods = [Method::Fixed, Method::Adaptive, Method::Proposed]
            .into_iter()
            .map(|method| MethodEntry {
                label: format!("m{}", method.number()),
                mprt: MprtConfig {
                    method,
                    ..base.clone()
                },
            })
            .collect();
    }

    /// Keeps a single method, built from the first entry's tunables.
    pub fn select_method(&mut self, method: Method) {
        let base = self
            .methods
            .first()
            .map(|m| m.mprt.clone())
            .unwrap_or_default();
        self.methods = vec![MethodEntry {
            label: format!("m{}", method.number()),
            mprt: MprtConfig { method, ..base },
        }];
    }
}

/// Sets one controller field from its textual value, keeping the field's
/// type. Unknown fields are rejected.
pub fn set_mprt_field(
    cfg: &MprtConfig,
    field: &str,
    value: &str,
) -> Result<MprtConfig, ConfigError> {
    let mut table = toml::Table::try_from(cfg).expect("controller config serialises");
    let current = table
        .get(field)
        .ok_or_else(|| invalid(field, "not a controller field"))?;
    let parse_err = || invalid(field, format!("cannot parse `{value}`"));
    let new = match current {
        toml::Value::Float(_) => toml::Value::Float(value.parse().map_err(|_| parse_err())?),
        toml::Value::Integer(_) => toml::Value::Integer(value.parse().map_err(|_| parse_err())?),
        toml::Value::Boolean(_) => toml::Value::Boolean(value.parse().map_err(|_| parse_err())?),
        toml::Value::String(_) => toml::Value::String(value.to_string()),
        _ => return Err(invalid(field, "cannot be swept")),
    };
    table.insert(field.to_string(), new);
    MprtConfig::deserialize(toml::Value::Table(table)).map_err(|e| invalid(field, e.to_string()))
}
