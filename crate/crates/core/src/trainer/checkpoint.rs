use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::pipeline::{EditModel, ModelConfig};

use super::optim::Adam;
use super::run::LossRecord;
use super::{TrainConfig, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Reference to a frozen module: rebuilt from its seed, verified by fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenRef {
    pub seed: u64,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntries {
    pub mapping_network: ParamSet,
    pub lora: ParamSet,
    pub denoiser: FrozenRef,
    pub schedule: ScheduleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub mapping_network: Adam,
    pub lora: Adam,
}

/// Trainable state plus everything needed to rebuild the frozen modules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub tag: Option<String>,
    pub step: u64,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub entries: CheckpointEntries,
    pub optimizer: OptimizerState,
    /// Fingerprint of encoders, autoencoder, base denoiser and schedule.
    pub frozen_fingerprint: String,
    pub log_tail: Vec<LossRecord>,
}

impl Checkpoint {
    pub fn capture(state: &TrainState, train_config: &TrainConfig, log_tail: Vec<LossRecord>) -> Self {
        let m = &state.model;
        Self {
            version: CHECKPOINT_VERSION,
            tag: None,
            step: state.step,
            model_config: m.config.clone(),
            train_config: train_config.clone(),
            entries: CheckpointEntries {
                mapping_network: m.mapping.params().clone(),
                lora: m.lora.params().clone(),
                denoiser: FrozenRef {
                    seed: m.config.denoiser.seed,
                    fingerprint: m.denoiser.params().fingerprint(),
                },
                schedule: m.config.schedule.clone(),
            },
            optimizer: OptimizerState {
                mapping_network: state.mapping_opt.clone(),
                lora: state.lora_opt.clone(),
            },
            frozen_fingerprint: m.frozen_fingerprint(),
            log_tail,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "{}: checkpoint version {} is not supported",
                path.display(),
                ck.version
            )));
        }
        Ok(ck)
    }

    /// Rebuilds the model, checks the frozen modules match, and restores
    /// trainable parameters and optimizer state.
    pub fn restore(&self) -> Result<TrainState> {
        let mut model = EditModel::new(&self.model_config)?;
        if model.denoiser.params().fingerprint() != self.entries.denoiser.fingerprint
            || model.frozen_fingerprint() != self.frozen_fingerprint
        {
            return Err(Error::InvalidInput(
                "frozen modules rebuilt from the checkpoint config do not match its fingerprint".into(),
            ));
        }
        model.mapping.set_params(self.entries.mapping_network.clone())?;
        model.lora.set_params(self.entries.lora.clone())?;
        Ok(TrainState {
            model,
            mapping_opt: self.optimizer.mapping_network.clone(),
            lora_opt: self.optimizer.lora.clone(),
            step: self.step,
        })
    }

    pub fn restore_model(&self) -> Result<EditModel> {
        Ok(self.restore()?.model)
    }
}
