//! TOML configuration file mirroring the pipeline's tunables.
//!
//! Every section and key is optional; omitted keys take the defaults
//! below. `VWAP_FORGE_ENDPOINT` overrides `data.endpoint` when set.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureConfig, FEATURE_DIM};
use crate::market_data::{KlinesConfig, SplitSpec, SynthSpec};
use crate::model::{ModelConfig, ModelKind};
use crate::training::TrainConfig;

pub const ENDPOINT_ENV_VAR: &str = "VWAP_FORGE_ENDPOINT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synth: SynthSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub endpoint: String,
    pub rate_limit_ms: u64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let k = KlinesConfig::default();
        Self {
            endpoint: k.endpoint,
            rate_limit_ms: k.rate_limit_ms,
            max_retries: k.max_retries,
            retry_base_ms: k.retry_base_ms,
        }
    }
}

/// Architecture sizes. Hidden width and the KAN dimensions are the knobs
/// that trade accuracy against wall-clock at desk scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub tkan_sublayers: usize,
    pub kan_in: usize,
    pub kan_out: usize,
    pub kan_grid_size: usize,
    pub kan_spline_order: usize,
    pub adjust_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: 100,
            tkan_sublayers: 2,
            kan_in: 20,
            kan_out: 20,
            kan_grid_size: 5,
            kan_spline_order: 3,
            adjust_hidden: 32,
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let body = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&body)
    }

    pub fn parse(body: &str) -> Result<Self, ConfigError> {
        let mut config: AppConfig =
            toml::from_str(body).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.apply_env_overrides(|k| std::env::var(k).ok());
        Ok(config)
    }

    /// Applies environment overrides through an injectable lookup.
    pub fn apply_env_overrides<F>(&mut self, lookup: F)
    where
        F: Fn(&str) -> Option<String>,
    {
        if let Some(endpoint) = lookup(ENDPOINT_ENV_VAR) {
            self.data.endpoint = endpoint;
        }
    }

    pub fn klines_config(&self) -> KlinesConfig {
        KlinesConfig {
            endpoint: self.data.endpoint.clone(),
            rate_limit_ms: self.data.rate_limit_ms,
            max_retries: self.data.max_retries,
            retry_base_ms: self.data.retry_base_ms,
            page_limit: 1000,
        }
    }

    pub fn model_config(&self, kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            lookback: self.features.lookback,
            horizon: self.features.horizon,
            input_dim: FEATURE_DIM,
            hidden: self.model.hidden,
            tkan_sublayers: self.model.tkan_sublayers,
            kan_in: self.model.kan_in,
            kan_out: self.model.kan_out,
            kan_grid_size: self.model.kan_grid_size,
            kan_spline_order: self.model.kan_spline_order,
            adjust_hidden: self.model.adjust_hidden,
        }
    }
}
