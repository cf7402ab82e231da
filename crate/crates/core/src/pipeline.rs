//! The full editor: frozen encoders, autoencoder and base denoiser together
//! with the trainable mapping network and adapters.

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::diffusion::{
    sample, AdaptedDenoiser, Denoiser, DenoiserConfig, Latent, LoraAdapter, LoraConfig,
    NoiseSchedule, PatchAutoencoder, SamplerConfig, ScheduleConfig,
};
use crate::encoders::{ConditionEmbedding, EncoderConfig, EncoderSuite};
use crate::error::{Error, Result};
use crate::mapping::{MappingConfig, MappingNetwork, TokenSequence};
use crate::raster::Image;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub mapping: MappingConfig,
    pub denoiser: DenoiserConfig,
    pub lora: LoraConfig,
    pub schedule: ScheduleConfig,
    pub autoencoder_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            mapping: MappingConfig::default(),
            denoiser: DenoiserConfig::default(),
            lora: LoraConfig::default(),
            schedule: ScheduleConfig::default(),
            autoencoder_seed: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.mapping.validate(self.encoder.dims.d_token)?;
        if self.mapping.n_tokens > self.encoder.dims.n_ctx {
            return Err(Error::config(
                "mapping.n_tokens",
                format!(
                    "{} tokens exceed the condition context n_ctx = {}",
                    self.mapping.n_tokens, self.encoder.dims.n_ctx
                ),
            ));
        }
        Ok(())
    }
}

pub struct EditModel {
    pub config: ModelConfig,
    pub encoders: EncoderSuite,
    pub autoencoder: PatchAutoencoder,
    pub schedule: NoiseSchedule,
    pub mapping: MappingNetwork,
    pub denoiser: Denoiser,
    pub lora: LoraAdapter,
}

impl EditModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = &config.encoder.dims;
        let denoiser = Denoiser::new(&config.denoiser, d.d_cond)?;
        let lora = LoraAdapter::new(&config.lora, &denoiser)?;
        Ok(Self {
            config: config.clone(),
            encoders: EncoderSuite::from_config(&config.encoder)?,
            autoencoder: PatchAutoencoder::new(config.autoencoder_seed),
            schedule: NoiseSchedule::new(&config.schedule)?,
            mapping: MappingNetwork::new(&config.mapping, d.d_a, d.d_token)?,
            denoiser,
            lora,
        })
    }

    pub fn audio_tokens(&self, clip: &AudioClip) -> Result<TokenSequence> {
        let f = self.encoders.audio.encode_audio(clip)?;
        self.mapping.forward(&f)
    }

    pub fn condition(&self, clip: &AudioClip) -> Result<ConditionEmbedding> {
        self.encoders.condition.encode_condition(&self.audio_tokens(clip)?)
    }

    /// Condition of an all-zero token sequence, used as the unconditional branch.
    pub fn null_condition(&self) -> Result<ConditionEmbedding> {
        let tokens = TokenSequence::new(Matrix::zeros(
            self.config.mapping.n_tokens,
            self.mapping.d_token(),
        ))?;
        self.encoders.condition.encode_condition(&tokens)
    }

    pub fn predictor(&self) -> AdaptedDenoiser<'_> {
        AdaptedDenoiser {
            denoiser: &self.denoiser,
            lora: Some(&self.lora),
            schedule: &self.schedule,
        }
    }

    pub fn edit_latent(&self, image: &Latent, clip: &AudioClip, sampler: &SamplerConfig) -> Result<Latent> {
        let cond = self.condition(clip)?;
        let null = self.null_condition()?;
        sample(&self.predictor(), &self.schedule, image, &cond, &null, sampler)
    }

    pub fn edit(&self, image: &Image, clip: &AudioClip, sampler: &SamplerConfig) -> Result<Image> {
        let z = self.autoencoder.encode(image)?;
        let out = self.edit_latent(&z, clip, sampler)?;
        self.autoencoder.decode(&out)
    }

    /// Combined fingerprint of everything that must stay frozen.
    pub fn frozen_fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.encoders.fingerprint());
        h.update(self.autoencoder.fingerprint());
        h.update(self.denoiser.params().fingerprint());
        for ab in self.schedule.alpha_bars() {
            h.update(ab.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
