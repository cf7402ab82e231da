use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::check_same_layout;
use crate::params::ParamSet;
use crate::rng::{normal_matrix, stream};
use crate::tensor::Matrix;

use super::unet::Denoiser;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Adapted layers; `None` means every cross-attention projection.
    pub targets: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 2,
            alpha: 2.0,
            targets: None,
            seed: 13,
        }
    }
}

/// Low-rank adapters `W + (alpha / r) B A` on named denoiser layers.
///
/// `A` is `r × d_in` with `N(0, 1/d_in)` entries, `B` is `d_out × r` and
/// starts at zero, so a fresh adapter leaves the denoiser unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    config: LoraConfig,
    targets: Vec<String>,
    params: ParamSet,
}

impl LoraAdapter {
    pub fn new(config: &LoraConfig, denoiser: &Denoiser) -> Result<Self> {
        if config.rank < 1 {
            return Err(Error::config("lora.rank", "must be at least 1"));
        }
        if !(config.alpha.is_finite() && config.alpha > 0.0) {
            return Err(Error::config("lora.alpha", "must be positive"));
        }
        let targets = match &config.targets {
            Some(t) if t.is_empty() => {
                return Err(Error::config("lora.targets", "must name at least one layer"))
            }
            Some(t) => t.clone(),
            None => Denoiser::cross_attention_layers(),
        };
        let mut rng = stream(config.seed, "lora.init");
        let mut params = ParamSet::new();
        for (i, name) in targets.iter().enumerate() {
            let (d_in, d_out) = denoiser.layer_dims(name).ok_or_else(|| {
                Error::config(format!("lora.targets[{i}]"), format!("unknown layer `{name}`"))
            })?;
            params.insert(
                format!("{name}.lora_a"),
                normal_matrix(&mut rng, config.rank, d_in, 1.0 / (d_in as f64).sqrt()),
            );
            params.insert(format!("{name}.lora_b"), Matrix::zeros(d_out, config.rank));
        }
        Ok(Self {
            config: config.clone(),
            targets,
            params,
        })
    }

    pub fn config(&self) -> &LoraConfig {
        &self.config
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn scale(&self) -> f64 {
        self.config.alpha / self.config.rank as f64
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        check_same_layout(&self.params, &params, "lora")?;
        self.params = params;
        Ok(())
    }

    /// Trainable scalar count, `Σ r (d_in + d_out)`.
    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Denoiser parameters with every adapter folded into its base weight.
    pub fn merged(&self, base: &ParamSet) -> Result<ParamSet> {
        let mut out = base.clone();
        let s = self.scale();
        for name in &self.targets {
            let a = &self.params.get(&format!("{name}.lora_a")).expect("lora_a");
            let b = &self.params.get(&format!("{name}.lora_b")).expect("lora_b");
            let w = out
                .get_mut(&format!("{name}.weight"))
                .ok_or_else(|| Error::config("lora.targets", format!("unknown layer `{name}`")))?;
            let delta = a.t_matmul(&b.transpose());
            w.add_assign(&delta.scale(s));
        }
        Ok(out)
    }
}
