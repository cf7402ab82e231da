//! Joint optimization of the mapping network and the low-rank adapters.
//!
//! Encoders, the autoencoder and the base denoiser enter every graph as
//! constants, so only the two trainable parameter sets ever receive
//! gradients or updates.

mod checkpoint;
mod optim;
mod run;

pub use checkpoint::{Checkpoint, CheckpointEntries, FrozenRef, OptimizerState, CHECKPOINT_VERSION};
pub use optim::{Adam, AdamConfig};
pub use run::{ablation_matrix, evaluate_loss, run, split_indices, AblationRow, LogRecord, LossRecord, RunOutcome, StopReason};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::diffusion::Latent;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{
    info_nce_graph, l1_token_reg_graph, ldm_loss_graph, total_loss, L1Reduction, LossReport,
    LossWeights,
};
use crate::nn::{Adapter, Layers};
use crate::params::ParamSet;
use crate::pipeline::EditModel;
use crate::raster::Image;
use crate::rng::{normal_matrix, stream};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub resolution: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub temperature: f64,
    pub l1_reduction: L1Reduction,
    pub use_nce: bool,
    /// Probability of training a sample against the null condition.
    pub cond_dropout: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub eval_every: u64,
    /// Evaluations without improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Evaluations before early stopping may trigger.
    pub warmup_evals: usize,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 48,
            resolution: 256,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            temperature: 1.0,
            l1_reduction: L1Reduction::Sum,
            use_nce: true,
            cond_dropout: 0.0,
            seed: 0,
            val_fraction: 0.1,
            eval_every: 100,
            early_stop_patience: 5,
            warmup_evals: 1,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    /// Desk-scale settings: batch 8 at 32×32.
    pub fn toy() -> Self {
        Self {
            batch_size: 8,
            resolution: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::config("train.steps", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.resolution == 0 || self.resolution % 16 != 0 {
            return Err(Error::config(
                "train.resolution",
                "must be a positive multiple of 16 (autoencoder factor 4, two U-net poolings)",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::config("train.cond_dropout", "must be within [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("train.val_fraction", "must be within [0, 1)"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every", "must be at least 1"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config("train.temperature", "must be positive"));
        }
        self.loss.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(format!("train.{path}"), message),
            other => other,
        })
    }

    /// Weights actually applied: the contrastive weight is zero when disabled.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            lambda_nce: if self.use_nce { self.loss.lambda_nce } else { 0.0 },
            lambda_l1: self.loss.lambda_l1,
        }
    }
}

/// One training triplet with everything the frozen modules contribute
/// precomputed.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub audio_features: Vec<f64>,
    pub before_latent: Latent,
    pub after_latent: Latent,
    pub after_embedding: Vec<f64>,
}

impl PreparedSample {
    pub fn new(model: &EditModel, before: &Image, after: &Image, audio: &AudioClip) -> Result<Self> {
        if !before.same_dims(after) {
            return Err(Error::shape("before and after images differ in size"));
        }
        Ok(Self {
            audio_features: model.encoders.audio.encode_audio(audio)?.values().to_vec(),
            before_latent: model.autoencoder.encode(before)?,
            after_latent: model.autoencoder.encode(after)?,
            after_embedding: model.encoders.image.encode_image(after)?.values().to_vec(),
        })
    }
}

/// Random draws for one sample of one step.
#[derive(Clone, Debug)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Matrix,
    pub drop_condition: bool,
}

/// Per-sample draws for a step, from a stream keyed by `(seed, step)`.
pub fn draw_noise(
    model: &EditModel,
    batch: &[&PreparedSample],
    seed: u64,
    step: u64,
    cond_dropout: f64,
) -> Vec<NoiseDraw> {
    let mut rng = stream(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15), "train.noise");
    batch
        .iter()
        .map(|s| {
            let t = rng.random_range(0..model.schedule.len());
            let (r, c) = s.after_latent.values.shape();
            let eps = normal_matrix(&mut rng, r, c, 1.0);
            let drop_condition = cond_dropout > 0.0 && rng.random::<f64>() < cond_dropout;
            NoiseDraw {
                t,
                eps,
                drop_condition,
            }
        })
        .collect()
}

/// Gradients of `l_total` with respect to the two trainable sets.
#[derive(Clone, Debug)]
pub struct TrainGradients {
    pub mapping: ParamSet,
    pub lora: ParamSet,
}

struct BatchGraph {
    g: Graph,
    total: Var,
    report: LossReport,
    mapping: crate::params::Binding,
    lora: crate::params::Binding,
}

fn build_batch(
    model: &EditModel,
    batch: &[&PreparedSample],
    draws: &[NoiseDraw],
    config: &TrainConfig,
) -> Result<BatchGraph> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    let weights = config.effective_weights();
    let mut g = Graph::new();
    let mapping = model.mapping.params().bind(&mut g, true);
    let lora = model.lora.params().bind(&mut g, true);
    let base = model.denoiser.params().bind(&mut g, false);
    let adapter = Adapter {
        binding: &lora,
        scale: model.lora.scale(),
    };
    let layers = Layers::with_adapter(&base, Some(adapter));
    let cond_enc = model.encoders.condition.as_ref();
    let null_tokens = Matrix::zeros(model.config.mapping.n_tokens, model.mapping.d_token());

    let mut ldm_terms = Vec::with_capacity(batch.len());
    let mut l1_terms = Vec::with_capacity(batch.len());
    let mut projected = Vec::with_capacity(batch.len());
    for (s, d) in batch.iter().zip(draws) {
        let f = g.constant(Matrix::row_vector(&s.audio_features));
        let tokens = model.mapping.forward_graph(&mut g, &mapping, f)?;
        let cond = cond_enc.encode_graph(&mut g, tokens)?;
        projected.push(cond_enc.project_graph(&mut g, cond)?);
        l1_terms.push(l1_token_reg_graph(&mut g, tokens, config.l1_reduction));

        let denoise_cond = if d.drop_condition {
            let z = g.constant(null_tokens.clone());
            cond_enc.encode_graph(&mut g, z)?
        } else {
            cond
        };
        let z_t = model.schedule.add_noise(&s.after_latent.values, &d.eps, d.t)?;
        let z_t = g.constant(z_t);
        let z_c = g.constant(s.before_latent.values.clone());
        let eps_hat = model.denoiser.eps_graph(
            &mut g,
            &layers,
            &model.schedule,
            z_t,
            z_c,
            d.t,
            denoise_cond,
            s.after_latent.height,
            s.after_latent.width,
        )?;
        let eps = g.constant(d.eps.clone());
        ldm_terms.push(ldm_loss_graph(&mut g, eps, eps_hat)?);
    }
    let ldm_all = g.concat_rows(&ldm_terms);
    let ldm = g.mean(ldm_all);
    let l1_all = g.concat_rows(&l1_terms);
    let l1 = g.mean(l1_all);
    let qv = g.concat_rows(&projected);
    let qi = Matrix::from_fn(batch.len(), batch[0].after_embedding.len(), |r, c| {
        batch[r].after_embedding[c]
    });
    let qi = g.constant(qi);
    let nce = info_nce_graph(&mut g, qv, qi, config.temperature)?;

    let report = total_loss(
        g.value(ldm).item(),
        g.value(nce).item(),
        g.value(l1).item(),
        &weights,
    );
    let mut total = ldm;
    if weights.lambda_nce != 0.0 {
        let t = g.scale(nce, weights.lambda_nce);
        total = g.add(total, t);
    }
    if weights.lambda_l1 != 0.0 {
        let t = g.scale(l1, weights.lambda_l1);
        total = g.add(total, t);
    }
    Ok(BatchGraph {
        g,
        total,
        report,
        mapping,
        lora,
    })
}

/// Loss report for a batch under fixed draws, without gradients.
pub fn batch_loss(
    model: &EditModel,
    batch: &[&PreparedSample],
    draws: &[NoiseDraw],
    config: &TrainConfig,
) -> Result<LossReport> {
    Ok(build_batch(model, batch, draws, config)?.report)
}

/// Loss report and trainable gradients for a batch under fixed draws.
pub fn batch_gradients(
    model: &EditModel,
    batch: &[&PreparedSample],
    draws: &[NoiseDraw],
    config: &TrainConfig,
) -> Result<(LossReport, TrainGradients)> {
    let bg = build_batch(model, batch, draws, config)?;
    let grads = bg.g.backward(bg.total);
    Ok((
        bg.report,
        TrainGradients {
            mapping: bg.mapping.gradients(&grads, model.mapping.params()),
            lora: bg.lora.gradients(&grads, model.lora.params()),
        },
    ))
}

/// Trainable state: the model plus one optimizer per parameter set.
pub struct TrainState {
    pub model: EditModel,
    pub mapping_opt: Adam,
    pub lora_opt: Adam,
    pub step: u64,
}

impl TrainState {
    pub fn new(model: EditModel, adam: AdamConfig) -> Self {
        let mapping_opt = Adam::new(adam, model.mapping.params());
        let lora_opt = Adam::new(adam, model.lora.params());
        Self {
            model,
            mapping_opt,
            lora_opt,
            step: 0,
        }
    }

    /// One optimizer step on a batch; draws follow `(config.seed, step)`.
    pub fn train_step(&mut self, batch: &[&PreparedSample], config: &TrainConfig) -> Result<LossReport> {
        let draws = draw_noise(&self.model, batch, config.seed, self.step, config.cond_dropout);
        let (report, grads) = batch_gradients(&self.model, batch, &draws, config)?;
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                components: format!(
                    "l_ldm={} l_nce={} l_l1={} l_total={}",
                    report.l_ldm, report.l_nce, report.l_l1, report.l_total
                ),
            });
        }
        self.mapping_opt
            .update(self.model.mapping.params_mut(), &grads.mapping, config.learning_rate);
        self.lora_opt
            .update(self.model.lora.params_mut(), &grads.lora, config.learning_rate);
        self.step += 1;
        Ok(report)
    }
}
