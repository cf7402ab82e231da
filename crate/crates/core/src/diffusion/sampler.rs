use serde::{Deserialize, Serialize};

use crate::encoders::ConditionEmbedding;
use crate::error::{Error, Result};
use crate::rng::{normal_matrix, stream};
use crate::tensor::Matrix;

use super::autoencoder::Latent;
use super::schedule::NoiseSchedule;

/// Anything that predicts the noise in a DDPM-space latent.
pub trait NoisePredictor {
    fn predict_eps(
        &self,
        z_t: &Latent,
        t: usize,
        image: &Latent,
        cond: &ConditionEmbedding,
    ) -> Result<Matrix>;
}

/// Two-scale classifier-free guidance over image and audio conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub s_cond: f64,
    pub s_img: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            s_cond: 1.0,
            s_img: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub seed: u64,
    pub guidance: GuidanceConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            seed: 0,
            guidance: GuidanceConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::config("sampler.steps", "must be at least 1"));
        }
        let g = self.guidance;
        if !(g.s_cond.is_finite() && g.s_img.is_finite()) {
            return Err(Error::config("sampler.guidance", "scales must be finite"));
        }
        Ok(())
    }
}

/// Timesteps visited by an `n`-step run, evenly spaced from `T - 1` to 0.
pub fn timesteps(schedule: &NoiseSchedule, steps: usize) -> Vec<usize> {
    let last = (schedule.len() - 1) as f64;
    if steps == 1 {
        return vec![schedule.len() - 1];
    }
    (0..steps)
        .map(|i| (last * (1.0 - i as f64 / (steps - 1) as f64)).round() as usize)
        .collect()
}

/// Guided noise estimate:
/// `e(∅,∅) + s_img (e(I,∅) - e(∅,∅)) + s_cond (e(I,c) - e(I,∅))`.
///
/// The null image is an all-zero latent. At `s_cond = s_img = 1` this is
/// exactly the fully conditioned prediction, which is returned directly.
pub fn guided_eps(
    model: &dyn NoisePredictor,
    z_t: &Latent,
    t: usize,
    image: &Latent,
    cond: &ConditionEmbedding,
    null_cond: &ConditionEmbedding,
    guidance: GuidanceConfig,
) -> Result<Matrix> {
    let full = model.predict_eps(z_t, t, image, cond)?;
    if guidance.s_cond == 1.0 && guidance.s_img == 1.0 {
        return Ok(full);
    }
    let null_image = image.zeros_like();
    let iu = model.predict_eps(z_t, t, image, null_cond)?;
    let uu = model.predict_eps(z_t, t, &null_image, null_cond)?;
    let (si, sc) = (guidance.s_img, guidance.s_cond);
    let mut out = Matrix::zeros(full.rows(), full.cols());
    for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
        let (f, a, u) = (full.as_slice()[i], iu.as_slice()[i], uu.as_slice()[i]);
        *o = u + si * (a - u) + sc * (f - a);
    }
    Ok(out)
}

/// Euler-ancestral sampling in the `x = z0 + σ eps` parametrization, with
/// `σ = sqrt((1 - ᾱ) / ᾱ)`. The model sees `x / sqrt(1 + σ²)`.
///
/// Starting noise and every ancestral draw come from streams keyed by
/// `config.seed`, so equal inputs give bit-identical outputs.
pub fn sample(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    image: &Latent,
    cond: &ConditionEmbedding,
    null_cond: &ConditionEmbedding,
    config: &SamplerConfig,
) -> Result<Latent> {
    config.validate()?;
    let ts = timesteps(schedule, config.steps);
    let mut sigmas = ts
        .iter()
        .map(|&t| schedule.sigma(t))
        .collect::<Result<Vec<_>>>()?;
    sigmas.push(0.0);
    let (rows, cols) = image.values.shape();
    let mut init_rng = stream(config.seed, "sampler.init");
    let mut step_rng = stream(config.seed, "sampler.step");
    let mut x = normal_matrix(&mut init_rng, rows, cols, 1.0).scale(sigmas[0]);
    for (i, &t) in ts.iter().enumerate() {
        let (s_from, s_to) = (sigmas[i], sigmas[i + 1]);
        let z_t = Latent::new(image.height, image.width, x.scale(1.0 / (1.0 + s_from * s_from).sqrt()))?;
        let eps = guided_eps(model, &z_t, t, image, cond, null_cond, config.guidance)?;
        let s_up = if s_from > 0.0 {
            (s_to * s_to * (s_from * s_from - s_to * s_to) / (s_from * s_from))
                .max(0.0)
                .sqrt()
                .min(s_to)
        } else {
            0.0
        };
        let s_down = (s_to * s_to - s_up * s_up).max(0.0).sqrt();
        let dt = s_down - s_from;
        for (xv, e) in x.as_mut_slice().iter_mut().zip(eps.as_slice()) {
            *xv += e * dt;
        }
        if s_to > 0.0 {
            let noise = normal_matrix(&mut step_rng, rows, cols, s_up);
            x.add_assign(&noise);
        }
    }
    if !x.is_finite() {
        return Err(Error::Numeric("sampler produced non-finite latents".into()));
    }
    Latent::new(image.height, image.width, x)
}
