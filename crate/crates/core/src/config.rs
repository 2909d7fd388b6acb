//! Run configuration read from TOML with dotted keys, e.g.
//!
//! ```toml
//! distill.gamma = 0.5
//! distill.detection.tau_sim = 0.6
//! policy.hidden = 64
//! backend.token_env = "KPDISTILL_BACKEND_TOKEN"
//! ```
//!
//! Every key is optional; missing keys keep their defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::keypoint::DistillConfig;
use crate::policy::TrainConfig;
use crate::proposal::RemoteConfig;
use crate::runtime::eval::EvalConfig;
use crate::runtime::{FeatureConfig, InferConfig, DEFAULT_PHASE_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeSettings {
    pub phase_threshold: f64,
    /// Start position of the end effector when none is given.
    pub home: [f64; 3],
}

impl Default for RuntimeSettings {
    fn default() -> Self {
        Self {
            phase_threshold: DEFAULT_PHASE_THRESHOLD,
            home: [0.0, 0.0, 0.55],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub features: FeatureConfig,
    pub distill: DistillConfig,
    pub backend: RemoteConfig,
    pub policy: TrainConfig,
    pub infer: InferConfig,
    pub runtime: RuntimeSettings,
    pub eval: EvalConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid configuration: {0}")]
    Parse(String),
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_dotted_keys_override() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        let c = Config::from_toml(
            "distill.gamma = 0.75\ndistill.detection.tau_sim = 0.5\npolicy.hidden = 16\n\
             backend.token_env = \"MY_TOKEN\"\ninfer.planner.step = 0.02\n",
        )
        .unwrap();
        assert_eq!(c.distill.gamma, 0.75);
        assert_eq!(c.distill.detection.tau_sim, 0.5);
        assert_eq!(c.policy.hidden, 16);
        assert_eq!(c.backend.token_env, "MY_TOKEN");
        assert_eq!(c.infer.planner.step, 0.02);
        assert_eq!(c.infer.n_samples, 8);
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        assert!(Config::from_toml("polcy.hidden = 3\n").is_err());
    }
}
