#![allow(dead_code)]

use sonedit::audio::AudioClip;
use sonedit::eval::EvalSample;
use sonedit::pipeline::{EditModel, ModelConfig};
use sonedit::raster::Image;
use sonedit::toyworld::{apply_edit, render_scene, synth_audio, toy_categories};
use sonedit::trainer::PreparedSample;

pub struct Triplet {
    pub before: Image,
    pub after: Image,
    pub audio: AudioClip,
    pub category: String,
}

/// The `n`-triplet toy set: scene `1000 + j`, full-strength edit of category `j mod 6`.
pub fn toy_triplets(n: usize, side: usize) -> Vec<Triplet> {
    let cats = toy_categories();
    (0..n)
        .map(|j| {
            let cat = &cats[j % cats.len()];
            let before = render_scene(1000 + j as u64, j as u64, side, side).unwrap();
            let after = apply_edit(&before, cat, 1.0).unwrap();
            Triplet {
                audio: synth_audio(cat, j as u64).unwrap(),
                before,
                after,
                category: cat.name.clone(),
            }
        })
        .collect()
}

pub fn prepare(model: &EditModel, triplets: &[Triplet]) -> Vec<PreparedSample> {
    triplets
        .iter()
        .map(|t| PreparedSample::new(model, &t.before, &t.after, &t.audio).unwrap())
        .collect()
}

pub fn eval_samples(triplets: &[Triplet]) -> Vec<EvalSample> {
    triplets
        .iter()
        .enumerate()
        .map(|(j, t)| EvalSample {
            before: t.before.clone(),
            after: t.after.clone(),
            audio: t.audio.clone(),
            category: t.category.clone(),
            seed: j as u64,
        })
        .collect()
}

/// Reference dims with a narrow denoiser, for tests that run many forwards at 16×16.
pub fn small_model_config() -> ModelConfig {
    let mut mc = ModelConfig::default();
    mc.denoiser.base_width = 8;
    mc.denoiser.time_dim = 8;
    mc
}

/// `|a - b| <= tol · max(|a|, |b|, floor)`.
pub fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}
