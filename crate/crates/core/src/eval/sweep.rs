use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::diffusion::SamplerConfig;
use crate::error::{Error, Result};
use crate::pipeline::EditModel;
use crate::raster::Image;

use super::avs;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub gains: Vec<f64>,
    pub avs: Vec<f64>,
    pub nondecreasing: bool,
    #[serde(skip)]
    pub images: Vec<Image>,
}

/// One edit per gain, all with the same sampler seed.
pub fn volume_sweep(
    model: &EditModel,
    src: &Image,
    audio: &AudioClip,
    gains: &[f64],
    sampler: &SamplerConfig,
) -> Result<SweepReport> {
    if gains.is_empty() {
        return Err(Error::InvalidInput("volume sweep needs at least one gain".into()));
    }
    if gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) || gains.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("gains must be positive and strictly ascending".into()));
    }
    let mut images = Vec::with_capacity(gains.len());
    let mut trace = Vec::with_capacity(gains.len());
    for &g in gains {
        let clip = audio.at_gain(g)?;
        let edited = model.edit(src, &clip, sampler)?;
        trace.push(avs(model.encoders.joint.as_ref(), &clip, &edited)?);
        images.push(edited);
    }
    Ok(SweepReport {
        gains: gains.to_vec(),
        nondecreasing: trace.windows(2).all(|w| w[1] >= w[0]),
        avs: trace,
        images,
    })
}
