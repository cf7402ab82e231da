//! Training-triplet construction.
//!
//! Two branches produce `(before, after, audio)` triplets. The synthetic branch
//! turns source prompts and sound keywords into prompt pairs, renders image
//! pairs and filters them on directional, image-image and audio-visual
//! similarity. The real branch localizes the sounding object in a captured
//! frame, inpaints it away and keeps the inpainted frame as `before`. External
//! models sit behind traits; toy implementations ship here.

mod build;
mod categories;
mod filter;
mod generator;
mod manifest;
mod prompts;
mod real;

use serde::{Deserialize, Serialize};

pub use build::{build_dataset, build_real, build_synthetic, BuildConfig, BuildSummary};
pub use categories::{category_fixture, CategoryEntry, CategoryFixture};
pub use filter::{
    directional_similarity, filter_real, filter_synthetic, measure_synthetic, Directional,
    FilterDecision, FilterThresholds, RealAudioRule, RealMeasures, Reason, Rule, SyntheticMeasures,
};
pub use generator::{generate_image_pair, seeds_for_pair, PairGenerator, ToyPairGenerator, P_VALUE, SEEDS_PER_PAIR};
pub use manifest::{
    load_triplet, read_manifest, write_manifest, Decision, ManifestRecord, ManifestStats, MaskSummary, Provenance,
};
pub use prompts::{
    fill_source_template, fill_target_template, generate_prompt_pairs, generate_source_prompts, ClientFailure, PromptClient,
    ToyPromptClient, SOURCE_TEMPLATE, TARGET_TEMPLATE,
};
pub use real::{build_real_triplet, FixedRectLocalizer, Inpainter, Localizer, Mask, MeanFillInpainter, RealOutcome};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::raster::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Subset {
    Synthetic,
    Real,
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "synthetic" => Ok(Subset::Synthetic),
            "real" => Ok(Subset::Real),
            other => Err(Error::InvalidInput(format!("unknown subset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub source_prompt: String,
    pub target_prompt: String,
    pub keyword: String,
    pub category: String,
}

impl PromptPair {
    pub fn new(
        source_prompt: impl Into<String>,
        target_prompt: impl Into<String>,
        keyword: impl Into<String>,
        category: impl Into<String>,
    ) -> Result<Self> {
        let p = Self {
            source_prompt: source_prompt.into(),
            target_prompt: target_prompt.into(),
            keyword: keyword.into(),
            category: category.into(),
        };
        for (field, v) in [
            ("source_prompt", &p.source_prompt),
            ("target_prompt", &p.target_prompt),
            ("keyword", &p.keyword),
            ("category", &p.category),
        ] {
            if v.trim().is_empty() {
                return Err(Error::InvalidInput(format!("prompt pair field `{field}` is empty")));
            }
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditTriplet {
    pub before: Image,
    pub after: Image,
    pub audio: AudioClip,
    pub category: String,
    pub subset: Subset,
    pub seed: u64,
    /// Localization mask; present exactly for real triplets.
    pub mask: Option<Mask>,
}

impl EditTriplet {
    pub fn new(
        before: Image,
        after: Image,
        audio: AudioClip,
        category: impl Into<String>,
        subset: Subset,
        seed: u64,
        mask: Option<Mask>,
    ) -> Result<Self> {
        if !before.same_dims(&after) {
            return Err(Error::shape(format!(
                "before is {}x{} but after is {}x{}",
                before.height(),
                before.width(),
                after.height(),
                after.width()
            )));
        }
        match (subset, &mask) {
            (Subset::Real, None) => {
                return Err(Error::InvalidInput("real triplets need their localization mask".into()))
            }
            (Subset::Synthetic, Some(_)) => {
                return Err(Error::InvalidInput("synthetic triplets carry no mask".into()))
            }
            _ => {}
        }
        Ok(Self {
            before,
            after,
            audio,
            category: category.into(),
            subset,
            seed,
            mask,
        })
    }
}
