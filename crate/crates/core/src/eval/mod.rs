//! Edit-quality metrics, volume sweeps and opinion-score aggregation.

mod ablation;
mod fid;
mod mos;
mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, AblationReport};
pub use fid::{fid, gaussian_stats, frechet_distance, FID_EPS};
pub use mos::{mos_aggregate, mos_aggregate_reader, MosEntry, MosTable, RejectedRow};
pub use sweep::{volume_sweep, SweepReport};

use crate::audio::AudioClip;
use crate::diffusion::SamplerConfig;
use crate::embedding::{cosine, EmbeddingVector, Space};
use crate::encoders::{EncoderSuite, ImageEncoder, JointEmbedder};
use crate::error::{Error, Result};
use crate::pipeline::EditModel;
use crate::raster::Image;
use crate::tensor::Matrix;

/// Cosine of the joint embeddings of the audio and the edited image.
pub fn avs(joint: &dyn JointEmbedder, audio: &AudioClip, edited: &Image) -> Result<f64> {
    cosine(&joint.embed_audio(audio)?, &joint.embed_image(edited)?)
}

/// Cosine of the image-encoder embeddings.
pub fn iis(image: &dyn ImageEncoder, edited: &Image, reference: &Image) -> Result<f64> {
    cosine(&image.encode_image(edited)?, &image.encode_image(reference)?)
}

/// Cosine between a category-name embedding and the edited image.
pub fn tvs(category_text: &EmbeddingVector, image: &dyn ImageEncoder, edited: &Image) -> Result<f64> {
    if category_text.space() != Space::JointVl {
        return Err(Error::SpaceMismatch {
            left: Space::JointVl,
            right: category_text.space(),
        });
    }
    cosine(category_text, &image.encode_image(edited)?)
}

/// Category-name text embeddings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryTexts(pub BTreeMap<String, Vec<f64>>);

impl CategoryTexts {
    pub fn from_encoders<'a>(encoders: &EncoderSuite, names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for n in names {
            map.insert(n.to_string(), encoders.text.embed_text(n)?.values().to_vec());
        }
        Ok(Self(map))
    }

    pub fn get(&self, name: &str) -> Result<EmbeddingVector> {
        let v = self
            .0
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("no text embedding for category `{name}`")))?;
        EmbeddingVector::new(v.clone(), Space::JointVl)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub before: Image,
    pub after: Image,
    pub audio: AudioClip,
    pub category: String,
    /// Mixed into the sampler seed, so results do not depend on list order.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub avs: f64,
    pub iis: f64,
    pub tvs: f64,
    pub fid: f64,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn is_valid(&self) -> bool {
        [self.avs, self.iis, self.tvs, self.fid].iter().all(|v| v.is_finite())
            && self.n_samples >= 1
            && self.fid >= -1e-6
    }
}

/// Sum after sorting, so the result does not depend on input order.
fn order_free_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn sorted_rows(rows: Vec<Vec<f64>>) -> Result<Matrix> {
    let mut rows = rows;
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let d = rows.first().map_or(0, Vec::len);
    Matrix::from_vec(rows.len(), d, rows.concat())
}

/// Edits every `before` with its audio and scores against `after`.
/// FID compares image-encoder features of the edits with those of the targets.
pub fn evaluate_dataset(
    model: &EditModel,
    samples: &[EvalSample],
    texts: &CategoryTexts,
    sampler: &SamplerConfig,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("evaluation needs at least one sample".into()));
    }
    let enc = &model.encoders;
    let (mut a, mut i, mut t) = (Vec::new(), Vec::new(), Vec::new());
    let (mut real, mut gen) = (Vec::new(), Vec::new());
    for s in samples {
        let cfg = SamplerConfig {
            seed: sampler.seed ^ s.seed,
            ..sampler.clone()
        };
        let edited = model.edit(&s.before, &s.audio, &cfg)?;
        a.push(avs(enc.joint.as_ref(), &s.audio, &edited)?);
        i.push(iis(enc.image.as_ref(), &edited, &s.after)?);
        t.push(tvs(&texts.get(&s.category)?, enc.image.as_ref(), &edited)?);
        real.push(enc.image.encode_image(&s.after)?.values().to_vec());
        gen.push(enc.image.encode_image(&edited)?.values().to_vec());
    }
    let fid = fid(&sorted_rows(real)?, &sorted_rows(gen)?)?;
    Ok(MetricsReport {
        tag: None,
        avs: order_free_mean(a),
        iis: order_free_mean(i),
        tvs: order_free_mean(t),
        fid,
        n_samples: samples.len(),
    })
}
