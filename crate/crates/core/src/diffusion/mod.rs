//! Latent diffusion editor: noise schedule, patch autoencoder, conditional
//! U-net, low-rank adapters and the ancestral sampler.

mod autoencoder;
mod lora;
mod sampler;
mod schedule;
mod unet;

pub use autoencoder::{Latent, PatchAutoencoder, FACTOR, LATENT_CHANNELS};
pub use lora::{LoraAdapter, LoraConfig};
pub use sampler::{guided_eps, sample, timesteps, GuidanceConfig, NoisePredictor, SamplerConfig};
pub use schedule::{NoiseSchedule, ScheduleConfig};
pub use unet::{Denoiser, DenoiserConfig, ATTENTION_BLOCKS, ATTENTION_PROJECTIONS};

use crate::encoders::ConditionEmbedding;
use crate::error::Result;
use crate::graph::Graph;
use crate::nn::{Adapter, Layers};
use crate::tensor::Matrix;

/// A denoiser, optionally adapted, bound to its schedule for sampling.
pub struct AdaptedDenoiser<'a> {
    pub denoiser: &'a Denoiser,
    pub lora: Option<&'a LoraAdapter>,
    pub schedule: &'a NoiseSchedule,
}

impl NoisePredictor for AdaptedDenoiser<'_> {
    fn predict_eps(
        &self,
        z_t: &Latent,
        t: usize,
        image: &Latent,
        cond: &ConditionEmbedding,
    ) -> Result<Matrix> {
        let mut g = Graph::new();
        let base = self.denoiser.params().bind(&mut g, false);
        let lora_binding = self.lora.map(|l| l.params().bind(&mut g, false));
        let adapter = match (self.lora, &lora_binding) {
            (Some(l), Some(b)) => Some(Adapter {
                binding: b,
                scale: l.scale(),
            }),
            _ => None,
        };
        let layers = Layers::with_adapter(&base, adapter);
        let zt = g.constant(z_t.values.clone());
        let zc = g.constant(image.values.clone());
        let c = g.constant(cond.tokens().clone());
        let eps = self
            .denoiser
            .eps_graph(&mut g, &layers, self.schedule, zt, zc, t, c, z_t.height, z_t.width)?;
        Ok(g.value(eps).clone())
    }
}
