//! Top-level JSON configuration.
//!
//! Every block has a documented default and rejects unknown keys. Parse and
//! validation failures report the dotted key path that failed.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{BuildConfig, FilterThresholds};
use crate::diffusion::{DenoiserConfig, LoraConfig, SamplerConfig, ScheduleConfig};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::mapping::MappingConfig;
use crate::pipeline::ModelConfig;
use crate::trainer::TrainConfig;

/// Deserializes one config block; errors carry `prefix.key.path`.
pub fn parse_block<T: DeserializeOwned>(json: &str, prefix: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(json);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner == ".") {
            (true, true) => "<root>".to_string(),
            (true, false) => inner,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{inner}"),
        };
        Error::config(path, e.into_inner().to_string())
    })
}

pub fn parse_thresholds(json: &str) -> Result<FilterThresholds> {
    let t: FilterThresholds = parse_block(json, "thresholds")?;
    t.validate()?;
    Ok(t)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    /// When set, replaces `train.seed`, `sampler.seed` and `dataset.seed`.
    pub seed: Option<u64>,
    pub encoder: EncoderConfig,
    pub mapping: MappingConfig,
    pub denoiser: DenoiserConfig,
    pub lora: LoraConfig,
    pub schedule: ScheduleConfig,
    pub autoencoder_seed: u64,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub dataset: BuildConfig,
    pub thresholds: FilterThresholds,
    pub paths: PathsConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            seed: None,
            encoder: model.encoder,
            mapping: model.mapping,
            denoiser: model.denoiser,
            lora: model.lora,
            schedule: model.schedule,
            autoencoder_seed: model.autoencoder_seed,
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            dataset: BuildConfig::default(),
            thresholds: FilterThresholds::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl GlobalConfig {
    /// Desk-scale settings: batch 8 at 32×32, 500 steps at lr 3e-3.
    pub fn toy() -> Self {
        Self {
            train: TrainConfig {
                steps: 500,
                learning_rate: 3e-3,
                eval_every: 50,
                checkpoint_every: 250,
                ..TrainConfig::toy()
            },
            ..Self::default()
        }
    }

    pub fn parse(json: &str) -> Result<Self> {
        let cfg: Self = parse_block(json, "")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        self.dataset.validate()?;
        self.thresholds.validate()
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            mapping: self.mapping.clone(),
            denoiser: self.denoiser.clone(),
            lora: self.lora.clone(),
            schedule: self.schedule.clone(),
            autoencoder_seed: self.autoencoder_seed,
        }
    }

    /// Applies the global seed (`override_seed` first, then `self.seed`).
    pub fn seeded(mut self, override_seed: Option<u64>) -> Self {
        if let Some(s) = override_seed.or(self.seed) {
            self.seed = Some(s);
            self.train.seed = s;
            self.sampler.seed = s;
            self.dataset.seed = s;
        }
        self
    }
}
