//! Experiment configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelVariant};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Event-log CSV. When absent, `synthetic` is generated in memory.
    pub events_path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// Maximum behavior length `L`.
    pub max_len: usize,
    pub negative_ratio: usize,
    /// Seed of negative sampling.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            events_path: None,
            synthetic: Some(SyntheticSpec::default()),
            max_len: 50,
            negative_ratio: 1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Seeds parameter initialisation, the held-out split and batch order.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/dicycle"),
            model: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        match (&self.data.events_path, &self.data.synthetic) {
            (None, None) => Err(Error::Config("data needs events_path or a [data.synthetic] table".into())),
            (_, Some(spec)) => spec.validate(),
            _ => Ok(()),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text)?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn with_variant(mut self, variant: ModelVariant) -> Self {
        self.model.variant = variant;
        self
    }

    /// Small settings for smoke runs: `d = 8`, 50 users, two epochs.
    pub fn tiny() -> Self {
        let mut cfg = Self::default();
        cfg.model.dim = 8;
        cfg.model.hidden = vec![32, 16];
        cfg.train.epochs = 2;
        if let Some(spec) = &mut cfg.data.synthetic {
            spec.users = 50;
            spec.horizon_days = 30.0;
        }
        cfg
    }
}
