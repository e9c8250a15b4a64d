//! JSON simulation config: schema, defaults and validation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::DeviceProfile;
use crate::learning::{Architecture, SyntheticProfile};
use crate::local_policy::{HSchedule, LocalPolicy};
use crate::selection::PolicyKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Constraint { path: String, message: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

impl ConfigError {
    fn constraint(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Constraint { path: path.into(), message: message.into() }
    }

    /// Dotted path of the offending field, when known.
    pub fn field_path(&self) -> Option<&str> {
        match self {
            ConfigError::Parse { path, .. } | ConfigError::Constraint { path, .. } => Some(path),
            _ => None,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub name: PolicyKind,
    /// participants per round
    pub k: usize,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    /// Developer-preferred round duration T in seconds.
    pub deadline: f64,
    #[serde(default)]
    pub staleness_weight: f64,
    /// Defaults to `wireless-aware` for rewafl and `fixed` for the baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<LocalPolicy>,
}

impl PolicyConfig {
    pub fn local_policy(&self) -> LocalPolicy {
        self.local.unwrap_or(match self.name {
            PolicyKind::Rewafl => LocalPolicy::WirelessAware,
            _ => LocalPolicy::Fixed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBackend {
    /// Upload size in bits.
    pub model_bits: f64,
    /// Used for every device unless `per_device` is given.
    pub profile: SyntheticProfile,
    /// One entry per fleet device, in fleet order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_device: Vec<SyntheticProfile>,
}

impl SyntheticBackend {
    pub fn profiles(&self, fleet_len: usize) -> Vec<SyntheticProfile> {
        if self.per_device.is_empty() {
            vec![self.profile; fleet_len]
        } else {
            self.per_device.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic { classes: usize, dims: usize, n: usize, cluster_spread: f64, test_n: usize },
    Idx { train_images: PathBuf, train_labels: PathBuf, test_images: PathBuf, test_labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerBackend {
    pub data: DataSource,
    /// label-skew level in [0, 1]
    pub lambda: f64,
    pub samples_per_device: usize,
    pub architecture: Architecture,
    pub batch_size: usize,
    pub lr: f64,
    /// Defaults to 32 bits per parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_bits: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    Synthetic(SyntheticBackend),
    Trainer(TrainerBackend),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    pub rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
    pub policy: PolicyConfig,
    pub schedule: HSchedule,
    pub backend: BackendConfig,
    pub fleet: Vec<DeviceProfile>,
}

fn non_negative(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::constraint(path, format!("must be a finite value >= 0, got {v}")))
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::constraint(path, format!("must be a finite value > 0, got {v}")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::constraint(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.rounds == 0 {
            return Err(ConfigError::constraint("rounds", "must be >= 1"));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(ConfigError::constraint("target_accuracy", format!("{t} outside [0, 1]")));
            }
        }
        if self.fleet.is_empty() {
            return Err(ConfigError::constraint("fleet", "fleet is empty"));
        }
        let mut ids = BTreeSet::new();
        for (i, d) in self.fleet.iter().enumerate() {
            if !ids.insert(d.id) {
                return Err(ConfigError::constraint(format!("fleet[{i}].id"), format!("duplicate device id {}", d.id)));
            }
            d.validate().map_err(|e| ConfigError::constraint(format!("fleet[{i}]"), e.to_string()))?;
        }

        let p = &self.policy;
        if p.k == 0 {
            return Err(ConfigError::constraint("policy.k", "K must be >= 1"));
        }
        if p.k > self.fleet.len() {
            return Err(ConfigError::constraint(
                "policy.k",
                format!("K={} exceeds fleet size {}", p.k, self.fleet.len()),
            ));
        }
        non_negative("policy.alpha", p.alpha)?;
        non_negative("policy.beta", p.beta)?;
        positive("policy.deadline", p.deadline)?;
        non_negative("policy.staleness_weight", p.staleness_weight)?;

        self.schedule.validate().map_err(|m| ConfigError::constraint("schedule", m))?;

        match &self.backend {
            BackendConfig::Synthetic(s) => {
                non_negative("backend.model_bits", s.model_bits)?;
                s.profile.validate().map_err(|m| ConfigError::constraint("backend.profile", m))?;
                if !s.per_device.is_empty() && s.per_device.len() != self.fleet.len() {
                    return Err(ConfigError::constraint(
                        "backend.per_device",
                        format!("{} profiles for {} devices", s.per_device.len(), self.fleet.len()),
                    ));
                }
                for (i, prof) in s.per_device.iter().enumerate() {
                    prof.validate().map_err(|m| ConfigError::constraint(format!("backend.per_device[{i}]"), m))?;
                }
            }
            BackendConfig::Trainer(t) => {
                if !(0.0..=1.0).contains(&t.lambda) {
                    return Err(ConfigError::constraint("backend.lambda", format!("{} outside [0, 1]", t.lambda)));
                }
                if t.samples_per_device == 0 {
                    return Err(ConfigError::constraint("backend.samples_per_device", "must be >= 1"));
                }
                if t.batch_size == 0 {
                    return Err(ConfigError::constraint("backend.batch_size", "must be >= 1"));
                }
                positive("backend.lr", t.lr)?;
                if let Some(bits) = t.model_bits {
                    non_negative("backend.model_bits", bits)?;
                }
                if let Architecture::Mlp { hidden: 0 } = t.architecture {
                    return Err(ConfigError::constraint("backend.architecture.hidden", "must be >= 1"));
                }
                if let DataSource::Synthetic { classes, dims, n, cluster_spread, test_n } = &t.data {
                    if *classes < 2 || *dims == 0 || *n < *classes || *test_n == 0 {
                        return Err(ConfigError::constraint(
                            "backend.data",
                            "need classes >= 2, dims >= 1, n >= classes and test_n >= 1",
                        ));
                    }
                    non_negative("backend.data.cluster_spread", *cluster_spread)?;
                    if t.samples_per_device * self.fleet.len() > *n {
                        return Err(ConfigError::constraint(
                            "backend.samples_per_device",
                            format!("{} devices x {} samples exceeds n={n}", self.fleet.len(), t.samples_per_device),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a config from JSON text.
pub fn parse_config_str(text: &str) -> Result<SimConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: SimConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| ConfigError::Parse { path: e.path().to_string(), message: e.inner().to_string() })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}
