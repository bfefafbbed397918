//! Experiment configuration files (JSON, or TOML by `.toml` extension).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{MetricSlot, Mode};
use crate::models::{ModelError, ModelKind, Rank};
use crate::training::{ProjectionTrainConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid JSON config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid TOML config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub slots: Vec<MetricSlot>,
    pub modes: Vec<Mode>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { slots: vec![MetricSlot::Entity, MetricSlot::Timestamp], modes: vec![Mode::Filtered, Mode::Raw] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    /// Entity/predicate rank.
    pub rank: usize,
    /// Time rank; defaults to `rank`.
    #[serde(default)]
    pub time_rank: Option<usize>,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub projection: ProjectionTrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn new(model: ModelKind, rank: usize) -> Self {
        Self {
            model,
            rank,
            time_rank: None,
            training: TrainConfig::default(),
            projection: ProjectionTrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn rank(&self) -> Result<Rank, ModelError> {
        Rank::new(self.rank, self.time_rank.unwrap_or(self.rank))
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` as TOML when it ends in `.toml`, JSON otherwise.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
