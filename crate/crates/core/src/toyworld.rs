//! Procedural stand-ins for the sound dataset: a handful of sound categories,
//! each with a synthetic audio signature and a global colour-grading edit, plus
//! the smooth procedural scenes the edits are applied to.
//!
//! All content is a pure function of its keys and seeds.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::rng::{hash_str, normal_vec, stream};

pub const SAMPLE_RATE: u32 = 16_000;
pub const CLIP_SAMPLES: usize = 8_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundCategory {
    pub name: String,
    pub keywords: Vec<String>,
    /// Fundamental of the synthetic audio signature.
    pub tone_hz: f64,
    /// Additive RGB shift applied at strength 1.
    pub tint: [f64; 3],
    /// Contrast multiplier around mid-gray applied at strength 1.
    pub contrast: f64,
}

impl SoundCategory {
    fn new(name: &str, keywords: &[&str], tone_hz: f64, tint: [f64; 3], contrast: f64) -> Self {
        Self {
            name: name.into(),
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
            tone_hz,
            tint,
            contrast,
        }
    }

    /// Whether the prompt mentions this category by name or keyword.
    pub fn mentioned_in(&self, prompt: &str) -> bool {
        let lower = prompt.to_lowercase();
        std::iter::once(&self.name)
            .chain(&self.keywords)
            .any(|k| contains_phrase(&lower, &k.to_lowercase()))
    }
}

fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    let words: Vec<&str> = haystack
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| !w.is_empty())
        .collect();
    let target: Vec<&str> = phrase.split_whitespace().collect();
    !target.is_empty() && words.windows(target.len()).any(|w| w == target.as_slice())
}

/// The six-category toy subset.
pub fn toy_categories() -> Vec<SoundCategory> {
    vec![
        SoundCategory::new(
            "raining",
            &["Downpour", "Heavy rain", "Rain shower"],
            526.0,
            [-0.12, -0.04, 0.14],
            0.85,
        ),
        SoundCategory::new(
            "thunder",
            &["Stormy", "Thunderous", "Lightning-lit"],
            226.0,
            [-0.16, -0.14, -0.02],
            1.35,
        ),
        SoundCategory::new(
            "fire crackling",
            &["Burning", "Blazing", "Fiery"],
            3059.0,
            [0.20, 0.04, -0.14],
            1.1,
        ),
        SoundCategory::new(
            "footsteps on snow",
            &["Snowy", "Snow-covered", "Frosty"],
            922.0,
            [0.14, 0.16, 0.20],
            0.55,
        ),
        SoundCategory::new(
            "waterfall burbling",
            &["Waterlogged", "Misty", "Flooded"],
            1446.0,
            [-0.10, 0.10, 0.12],
            0.9,
        ),
        SoundCategory::new(
            "volcano explosion",
            &["Smoky", "Erupting", "Ash-covered"],
            2141.0,
            [0.16, -0.12, -0.16],
            1.3,
        ),
    ]
}

pub fn find_category<'a>(categories: &'a [SoundCategory], name: &str) -> Result<&'a SoundCategory> {
    categories
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown sound category `{name}`")))
}

/// Words describing scene conditions rather than content; they never key the
/// scene layout.
pub const CONDITION_WORDS: &[&str] = &[
    "sunny", "clear", "bright", "calm", "quiet", "cloudy", "an", "a", "the", "image", "of", "on",
    "day", "with", "and", "in", "at",
];

/// Layout key of a prompt: its lowercase content words, minus condition words
/// and any category keyword.
pub fn scene_key(prompt: &str, categories: &[SoundCategory]) -> u64 {
    let mut text = prompt.to_lowercase();
    for cat in categories {
        for k in std::iter::once(&cat.name).chain(&cat.keywords) {
            text = text.replace(&k.to_lowercase(), " ");
        }
    }
    let words: Vec<&str> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !CONDITION_WORDS.contains(w))
        .collect();
    hash_str(&words.join(" "))
}

/// A smooth three-colour procedural scene. `key` fixes the palette; `seed`
/// plays the role of the initial noise and moves the layout.
pub fn render_scene(key: u64, seed: u64, height: usize, width: usize) -> Result<Image> {
    let mut palette_rng = stream(key, "scene.palette");
    let palette: Vec<[f64; 3]> = (0..3)
        .map(|_| {
            [
                palette_rng.random_range(0.25..0.75),
                palette_rng.random_range(0.25..0.75),
                palette_rng.random_range(0.25..0.75),
            ]
        })
        .collect();
    let mut layout_rng = stream(key ^ seed.rotate_left(17), "scene.layout");
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                layout_rng.random_range(-1.5..1.5),
                layout_rng.random_range(-1.5..1.5),
                layout_rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    Image::from_fn(height, width, |y, x, c| {
        let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
        let w1 = 0.5 + 0.5 * (2.0 * PI * (waves[0].0 * u + waves[0].1 * v) + waves[0].2).sin();
        let w2 = 0.5 + 0.5 * (2.0 * PI * (waves[1].0 * u + waves[1].1 * v) + waves[1].2).sin();
        let base = palette[0][c] * (1.0 - w1) + palette[1][c] * w1;
        base * (1.0 - 0.5 * w2) + palette[2][c] * 0.5 * w2
    })
}

/// Global colour grading of category `cat` at the given strength:
/// `0.5 + (1 + s (contrast - 1)) (p - 0.5) + s · tint`.
pub fn apply_edit(img: &Image, cat: &SoundCategory, strength: f64) -> Result<Image> {
    let contrast = 1.0 + strength * (cat.contrast - 1.0);
    img.map(|_, _, c, p| 0.5 + contrast * (p - 0.5) + strength * cat.tint[c])
}

/// Smooth seeded perturbation with peak amplitude about `amplitude`.
pub fn perturb(img: &Image, seed: u64, amplitude: f64) -> Result<Image> {
    let mut rng = stream(seed, "scene.perturb");
    let coeffs = normal_vec(&mut rng, 9, 1.0);
    let (h, w) = (img.height() as f64, img.width() as f64);
    img.map(|y, x, c, p| {
        let (u, v) = (x as f64 / w, y as f64 / h);
        let field = coeffs[3 * c] * (2.0 * PI * u + coeffs[3 * c + 2]).sin()
            + coeffs[3 * c + 1] * (2.0 * PI * v).cos();
        p + amplitude * 0.5 * field
    })
}

/// A category's synthetic sound: a tone and its octave under a slow amplitude
/// envelope, plus light noise. Phases, envelope rate and noise follow `seed`.
pub fn synth_audio(cat: &SoundCategory, seed: u64) -> Result<AudioClip> {
    let mut rng = stream(seed ^ hash_str(&cat.name), "audio.synth");
    let phase1 = rng.random_range(0.0..2.0 * PI);
    let phase2 = rng.random_range(0.0..2.0 * PI);
    let rate = rng.random_range(2.0..6.0);
    let noise = normal_vec(&mut rng, CLIP_SAMPLES, 0.01);
    let sr = SAMPLE_RATE as f64;
    let samples = (0..CLIP_SAMPLES)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (2.0 * PI * rate * t).sin();
            let s = 0.8 * (2.0 * PI * cat.tone_hz * t + phase1).sin()
                + 0.2 * (2.0 * PI * 2.0 * cat.tone_hz * t + phase2).sin();
            (0.4 * env * s + noise[i]).clamp(-1.0, 1.0)
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE)
}

/// Axis-aligned box in pixel coordinates, `[y0, y1) × [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }

    pub fn area(&self) -> usize {
        (self.y1.saturating_sub(self.y0)) * (self.x1.saturating_sub(self.x0))
    }
}

/// A "captured" frame: a scene with the sounding object drawn as a strongly
/// tinted box. The box covers `area_fraction` of the image.
pub fn render_object_scene(
    cat: &SoundCategory,
    seed: u64,
    size: usize,
    area_fraction: f64,
) -> Result<(Image, Rect)> {
    let scene = render_scene(hash_str(&format!("real.{}", cat.name)), seed, size, size)?;
    let side = ((area_fraction.clamp(0.01, 1.0)).sqrt() * size as f64).round() as usize;
    let side = side.clamp(1, size);
    let mut rng = stream(seed, "real.placement");
    let y0 = rng.random_range(0..=size - side);
    let x0 = rng.random_range(0..=size - side);
    let rect = Rect {
        y0,
        x0,
        y1: y0 + side,
        x1: x0 + side,
    };
    let img = scene.map(|y, x, c, p| {
        if rect.contains(y, x) {
            let stripe = if (x + y) % 4 < 2 { 0.04 } else { -0.04 };
            0.5 + 2.4 * cat.tint[c] + stripe
        } else {
            p
        }
    })?;
    Ok((img, rect))
}
