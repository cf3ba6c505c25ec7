//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, Strategy};
use crate::sim::{ClusterSpec, RunMode};
use crate::workload::{Preset, Profile, UpdateKeys, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Optional overrides of the preset's sizes and function cost.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOverride {
    pub key_size: Option<u64>,
    pub param_size: Option<u64>,
    pub value_size: Option<u64>,
    pub computed_size: Option<u64>,
    pub function_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSection {
    pub preset: Preset,
    pub profile: ProfileOverride,
    pub tuples: u64,
    pub key_universe: u64,
    /// Zipf exponents to run.
    pub zipf: Vec<f64>,
    pub drift_shifts: u32,
    pub value_size_spread: f64,
    pub function_cost_spread: f64,
    pub update_rate: f64,
    pub update_keys: UpdateKeys,
    /// Replay this trace file instead of generating one.
    pub trace: Option<PathBuf>,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        Self {
            preset: Preset::DataHeavy,
            profile: ProfileOverride::default(),
            tuples: 100_000,
            key_universe: 10_000,
            zipf: vec![0.0, 0.5, 1.0, 1.5],
            drift_shifts: 0,
            value_size_spread: 0.0,
            function_cost_spread: 0.0,
            update_rate: 0.0,
            update_keys: UpdateKeys::Uniform,
            trace: None,
        }
    }
}

impl WorkloadSection {
    pub fn profile(&self) -> Result<Profile, ConfigError> {
        let o = &self.profile;
        let base = match self.preset.profile() {
            Some(p) => p,
            None => {
                let missing = |name: &str| ConfigError::Invalid(format!("custom preset needs workload.profile.{name}"));
                Profile {
                    key_size: o.key_size.ok_or_else(|| missing("key_size"))?,
                    param_size: o.param_size.ok_or_else(|| missing("param_size"))?,
                    value_size: o.value_size.ok_or_else(|| missing("value_size"))?,
                    computed_size: o.computed_size.ok_or_else(|| missing("computed_size"))?,
                    function_cost: o.function_cost.ok_or_else(|| missing("function_cost"))?,
                }
            }
        };
        Ok(Profile {
            key_size: o.key_size.unwrap_or(base.key_size),
            param_size: o.param_size.unwrap_or(base.param_size),
            value_size: o.value_size.unwrap_or(base.value_size),
            computed_size: o.computed_size.unwrap_or(base.computed_size),
            function_cost: o.function_cost.unwrap_or(base.function_cost),
        })
    }

    pub fn spec(&self, zipf_z: f64) -> Result<WorkloadSpec, ConfigError> {
        let spec = WorkloadSpec {
            preset: self.preset,
            profile: self.profile()?,
            tuples: self.tuples,
            key_universe: self.key_universe,
            zipf_z,
            drift_shifts: self.drift_shifts,
            value_size_spread: self.value_size_spread,
            function_cost_spread: self.function_cost_spread,
            update_rate: self.update_rate,
            update_keys: self.update_keys,
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub mode: RunMode,
    /// Also run caching strategies with decisions frozen after a prefix.
    pub nonadaptive: bool,
    /// 0 picks a limit from the trace length.
    pub event_budget: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            mode: RunMode::Batch,
            nonadaptive: false,
            event_budget: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cluster: ClusterSpec,
    pub engine: EngineConfig,
    pub workload: WorkloadSection,
    pub run: RunSection,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse { line, column, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(trace), Some(dir)) = (&cfg.workload.trace, path.parent()) {
            if trace.is_relative() {
                cfg.workload.trace = Some(dir.join(trace));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.cluster.resolved().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.engine.validate().map_err(ConfigError::Invalid)?;
        if self.workload.zipf.is_empty() {
            return bad("workload.zipf must list at least one exponent".into());
        }
        for &z in &self.workload.zipf {
            self.workload.spec(z)?;
        }
        if self.run.strategies.is_empty() {
            return bad("run.strategies must not be empty".into());
        }
        if self.run.seeds.is_empty() {
            return bad("run.seeds must not be empty".into());
        }
        Ok(())
    }
}
