use rand::Rng;

use crate::error::{Error, Result};
use crate::media::quantize_image;
use crate::raster::Image;
use crate::rng::{hash_str, stream};
use crate::toyworld::{apply_edit, find_category, perturb, render_scene, scene_key, SoundCategory};

use super::PromptPair;

pub const SEEDS_PER_PAIR: usize = 5;
/// Attention-injection fraction used for every generated pair.
pub const P_VALUE: f64 = 0.5;

/// Renders a before/after pair from a prompt pair and an initial-noise seed.
pub trait PairGenerator {
    fn generate(&self, pair: &PromptPair, seed: u64, p_value: f64) -> Result<(Image, Image)>;
}

/// The per-pair list of initial-noise seeds.
pub fn seeds_for_pair(pair: &PromptPair) -> [u64; SEEDS_PER_PAIR] {
    let mut rng = stream(
        hash_str(&format!("{}\n{}", pair.source_prompt, pair.target_prompt)),
        "generator.seeds",
    );
    std::array::from_fn(|_| rng.random::<u32>() as u64)
}

pub fn generate_image_pair(pair: &PromptPair, seed: u64, generator: &dyn PairGenerator) -> Result<(Image, Image)> {
    let (before, after) = generator
        .generate(pair, seed, P_VALUE)
        .map_err(|e| match e {
            Error::Generation(_) => e,
            other => Error::Generation(format!("{:?} seed {seed}: {other}", pair.target_prompt)),
        })?;
    if !before.same_dims(&after) {
        return Err(Error::Generation("generator returned images of different size".into()));
    }
    Ok((before, after))
}

/// Procedural generator: both images render the scene keyed on their prompt's
/// content words with the same layout seed, so they share structure whenever
/// the prompts share content. The target is graded by its category at a
/// seeded strength and perturbed by `amplitude · (1 − p)`.
#[derive(Clone, Debug)]
pub struct ToyPairGenerator {
    pub categories: Vec<SoundCategory>,
    pub size: usize,
    pub strength: (f64, f64),
    pub amplitude: f64,
}

impl ToyPairGenerator {
    pub fn new(categories: Vec<SoundCategory>, size: usize) -> Self {
        Self {
            categories,
            size,
            strength: (0.1, 1.0),
            amplitude: 0.1,
        }
    }
}

impl PairGenerator for ToyPairGenerator {
    fn generate(&self, pair: &PromptPair, seed: u64, p_value: f64) -> Result<(Image, Image)> {
        if !(0.0..=1.0).contains(&p_value) {
            return Err(Error::Generation(format!("p-value {p_value} outside [0, 1]")));
        }
        let cat = find_category(&self.categories, &pair.category)
            .map_err(|e| Error::Generation(e.to_string()))?;
        let s = self.size;
        let before = render_scene(scene_key(&pair.source_prompt, &self.categories), seed, s, s)?;
        let base = render_scene(scene_key(&pair.target_prompt, &self.categories), seed, s, s)?;
        let mut rng = stream(hash_str(&pair.target_prompt) ^ seed, "generator.strength");
        let strength = rng.random_range(self.strength.0..=self.strength.1);
        let edited = apply_edit(&base, cat, strength)?;
        let after = perturb(&edited, seed ^ hash_str(&pair.keyword), self.amplitude * (1.0 - p_value))?;
        Ok((quantize_image(&before)?, quantize_image(&after)?))
    }
}
