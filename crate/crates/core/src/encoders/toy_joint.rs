use crate::audio::{log_mel_statistics, AudioClip, MelConfig};
use crate::embedding::{cosine_raw, EmbeddingVector, Space};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::raster::{patch_statistics, Image};
use crate::rng::{hash_str, normal_vec, stream};
use crate::tensor::Matrix;
use crate::toyworld::{apply_edit, render_scene, synth_audio, SoundCategory};

use super::JointEmbedder;

/// Audio-visual embedder that scores both modalities against per-category
/// signatures and places the score vector on orthonormal seeded prototypes.
///
/// Audio score `k` is the cosine between the clip's centered mean-band
/// profile and category `k`'s reference profile. Image score `k` is the
/// cosine between the image's patch-statistic offset from a fixed reference
/// scene and the offset category `k`'s edit causes on that scene. Scores are
/// sharpened with `softmax(β s)` and mapped through `e = P s + b0`.
pub struct ToyJointEmbedder {
    mel: MelConfig,
    audio_templates: Vec<Vec<f64>>,
    reference_stats: Vec<f64>,
    image_signatures: Vec<Vec<f64>>,
    prototypes: Matrix,
    offset: Vec<f64>,
}

const REFERENCE_SIDE: usize = 32;
const OFFSET_STD: f64 = 0.05;
const SHARPNESS: f64 = 8.0;

fn centered_profile(clip: &AudioClip, mel: &MelConfig) -> Vec<f64> {
    let stats = log_mel_statistics(clip, mel);
    let profile = &stats[..mel.n_mels];
    let mean = profile.iter().sum::<f64>() / profile.len() as f64;
    profile.iter().map(|v| v - mean).collect()
}

fn safe_cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_raw(a, b).unwrap_or(0.0)
}

impl ToyJointEmbedder {
    pub fn new(seed: u64, dim: usize, categories: &[SoundCategory]) -> Result<Self> {
        let k = categories.len();
        if k == 0 || k > dim {
            return Err(Error::config(
                "encoder.dims.d_av",
                format!("needs at least {k} dimensions for {k} categories"),
            ));
        }
        let mel = MelConfig::default();
        let audio_templates = categories
            .iter()
            .map(|c| Ok(centered_profile(&synth_audio(c, 0)?, &mel)))
            .collect::<Result<Vec<_>>>()?;
        let reference = render_scene(hash_str("joint.reference"), 0, REFERENCE_SIDE, REFERENCE_SIDE)?;
        let base = patch_statistics(&reference);
        let image_signatures = categories
            .iter()
            .map(|c| {
                let edited = patch_statistics(&apply_edit(&reference, c, 1.0)?);
                Ok(edited.iter().zip(&base).map(|(e, b)| e - b).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;

        let mut rng = stream(seed, "encoder.joint");
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k);
        while columns.len() < k {
            let mut v = normal_vec(&mut rng, dim, 1.0);
            for u in &columns {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-8 {
                columns.push(v.into_iter().map(|a| a / n).collect());
            }
        }
        let prototypes = Matrix::from_fn(dim, k, |r, c| columns[c][r]);
        let offset = normal_vec(&mut rng, dim, OFFSET_STD);
        Ok(Self {
            mel,
            audio_templates,
            reference_stats: base,
            image_signatures,
            prototypes,
            offset,
        })
    }

    pub fn audio_scores(&self, clip: &AudioClip) -> Vec<f64> {
        let p = centered_profile(clip, &self.mel);
        self.audio_templates.iter().map(|t| safe_cosine(&p, t)).collect()
    }

    pub fn image_scores(&self, img: &Image) -> Vec<f64> {
        let f: Vec<f64> = patch_statistics(img)
            .iter()
            .zip(&self.reference_stats)
            .map(|(v, b)| v - b)
            .collect();
        self.image_signatures.iter().map(|s| safe_cosine(&f, s)).collect()
    }

    fn place(&self, scores: Vec<f64>) -> Result<EmbeddingVector> {
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = scores.iter().map(|v| (SHARPNESS * (v - top)).exp()).collect();
        let z: f64 = exp.iter().sum();
        let s = Matrix::from_vec(exp.len(), 1, exp.into_iter().map(|v| v / z).collect())?;
        let e = self.prototypes.matmul(&s);
        let values = e.as_slice().iter().zip(&self.offset).map(|(a, b)| a + b).collect();
        EmbeddingVector::new(values, Space::JointAv)
    }
}

impl JointEmbedder for ToyJointEmbedder {
    fn dim(&self) -> usize {
        self.prototypes.rows()
    }

    fn embed_audio(&self, clip: &AudioClip) -> Result<EmbeddingVector> {
        self.place(self.audio_scores(clip))
    }

    fn embed_image(&self, img: &Image) -> Result<EmbeddingVector> {
        self.place(self.image_scores(img))
    }

    fn fingerprint(&self) -> String {
        let mut p = ParamSet::new();
        p.insert("prototypes", self.prototypes.clone());
        p.insert("offset", Matrix::row_vector(&self.offset));
        for (i, t) in self.audio_templates.iter().enumerate() {
            p.insert(format!("audio.{i}"), Matrix::row_vector(t));
        }
        for (i, s) in self.image_signatures.iter().enumerate() {
            p.insert(format!("image.{i}"), Matrix::row_vector(s));
        }
        p.fingerprint()
    }
}
