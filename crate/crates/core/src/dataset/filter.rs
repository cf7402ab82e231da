use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::embedding::{cosine, EmbeddingVector, Space};
use crate::encoders::EncoderSuite;
use crate::error::{Error, Result};
use crate::raster::Image;

use super::PromptPair;

/// How the real branch decides the inpainted frame still shows the source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealAudioRule {
    /// `sim(audio, inpainted) ≥ sim(audio, original)`.
    #[default]
    Comparative,
    /// `sim(audio, inpainted) > real_avs_discard_above`.
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterThresholds {
    pub directional_min: f64,
    pub iis_min: f64,
    pub avs_min: f64,
    pub real_iis_discard_above: f64,
    pub real_audio_rule: RealAudioRule,
    pub real_avs_discard_above: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            directional_min: 0.2,
            iis_min: 0.7,
            avs_min: 0.2,
            real_iis_discard_above: 0.7,
            real_audio_rule: RealAudioRule::Comparative,
            real_avs_discard_above: 0.2,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("directional_min", self.directional_min),
            ("iis_min", self.iis_min),
            ("avs_min", self.avs_min),
            ("real_iis_discard_above", self.real_iis_discard_above),
            ("real_avs_discard_above", self.real_avs_discard_above),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::config(format!("thresholds.{name}"), format!("{v} is outside [-1, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Directional,
    Iis,
    Avs,
    NoSourceLocalized,
    ResidualObject,
}

/// A failed rule with the measured value and the bound it was held to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reason {
    pub rule: Rule,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub keep: bool,
    pub reasons: Vec<Reason>,
}

impl FilterDecision {
    fn from_reasons(reasons: Vec<Reason>) -> Self {
        Self {
            keep: reasons.is_empty(),
            reasons,
        }
    }

    pub fn failed(&self, rule: Rule) -> bool {
        self.reasons.iter().any(|r| r.rule == rule)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Directional {
    pub value: f64,
    pub degenerate: bool,
}

/// Cosine between the image-embedding delta and the text-embedding delta.
/// A zero delta on either side gives `0` with the degenerate flag.
pub fn directional_similarity(
    src_img: &EmbeddingVector,
    tgt_img: &EmbeddingVector,
    src_txt: &EmbeddingVector,
    tgt_txt: &EmbeddingVector,
) -> Result<Directional> {
    for e in [src_img, tgt_img, src_txt, tgt_txt] {
        if e.space() != Space::JointVl {
            return Err(Error::SpaceMismatch {
                left: Space::JointVl,
                right: e.space(),
            });
        }
    }
    let di = tgt_img.delta(src_img)?;
    let dt = tgt_txt.delta(src_txt)?;
    if di.len() != dt.len() {
        return Err(Error::shape(format!(
            "image delta has {} dims, text delta {}",
            di.len(),
            dt.len()
        )));
    }
    let ni = di.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nt = dt.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ni <= 1e-12 || nt <= 1e-12 {
        return Ok(Directional {
            value: 0.0,
            degenerate: true,
        });
    }
    let dot: f64 = di.iter().zip(&dt).map(|(a, b)| a * b).sum();
    Ok(Directional {
        value: (dot / (ni * nt)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeasures {
    pub dir_sim: f64,
    pub degenerate: bool,
    pub iis: f64,
    pub avs: f64,
}

pub fn measure_synthetic(
    encoders: &EncoderSuite,
    pair: &PromptPair,
    before: &Image,
    after: &Image,
    audio: &AudioClip,
) -> Result<SyntheticMeasures> {
    let src_img = encoders.image.encode_image(before)?;
    let tgt_img = encoders.image.encode_image(after)?;
    let src_txt = encoders.text.embed_text(&pair.source_prompt)?;
    let tgt_txt = encoders.text.embed_text(&pair.target_prompt)?;
    let dir = directional_similarity(&src_img, &tgt_img, &src_txt, &tgt_txt)?;
    let a = encoders.joint.embed_audio(audio)?;
    let v = encoders.joint.embed_image(after)?;
    Ok(SyntheticMeasures {
        dir_sim: dir.value,
        degenerate: dir.degenerate,
        iis: cosine(&src_img, &tgt_img)?,
        avs: cosine(&a, &v)?,
    })
}

/// Keep iff directional ≥ min (never when degenerate), iis ≥ min and avs ≥ min.
pub fn filter_synthetic(m: &SyntheticMeasures, t: &FilterThresholds) -> FilterDecision {
    let mut reasons = Vec::new();
    if m.degenerate || !(m.dir_sim >= t.directional_min) {
        reasons.push(Reason {
            rule: Rule::Directional,
            value: m.dir_sim,
            threshold: t.directional_min,
        });
    }
    if !(m.iis >= t.iis_min) {
        reasons.push(Reason {
            rule: Rule::Iis,
            value: m.iis,
            threshold: t.iis_min,
        });
    }
    if !(m.avs >= t.avs_min) {
        reasons.push(Reason {
            rule: Rule::Avs,
            value: m.avs,
            threshold: t.avs_min,
        });
    }
    FilterDecision::from_reasons(reasons)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealMeasures {
    /// Image-encoder cosine between the inpainted and original frames.
    pub iis: f64,
    pub avs_original: f64,
    pub avs_inpainted: f64,
}

/// `None` means the localizer found nothing. Both rules are always evaluated.
pub fn filter_real(m: Option<&RealMeasures>, t: &FilterThresholds) -> FilterDecision {
    let Some(m) = m else {
        return FilterDecision::from_reasons(vec![Reason {
            rule: Rule::NoSourceLocalized,
            value: 0.0,
            threshold: 1.0,
        }]);
    };
    let mut reasons = Vec::new();
    if !(m.iis <= t.real_iis_discard_above) {
        reasons.push(Reason {
            rule: Rule::Iis,
            value: m.iis,
            threshold: t.real_iis_discard_above,
        });
    }
    let (residual, bound) = match t.real_audio_rule {
        RealAudioRule::Comparative => (!(m.avs_inpainted < m.avs_original), m.avs_original),
        RealAudioRule::Absolute => (!(m.avs_inpainted <= t.real_avs_discard_above), t.real_avs_discard_above),
    };
    if residual {
        reasons.push(Reason {
            rule: Rule::ResidualObject,
            value: m.avs_inpainted,
            threshold: bound,
        });
    }
    FilterDecision::from_reasons(reasons)
}
