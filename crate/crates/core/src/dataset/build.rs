use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::EncoderSuite;
use crate::error::{Error, Result};
use crate::media::{quantize_audio, quantize_image, save_png, save_wav};
use crate::rng::{hash_str, stream};
use crate::toyworld::{find_category, render_object_scene, synth_audio, toy_categories, SoundCategory};

use super::filter::{filter_synthetic, measure_synthetic, FilterThresholds};
use super::generator::{generate_image_pair, seeds_for_pair, PairGenerator, ToyPairGenerator, P_VALUE};
use super::manifest::{write_manifest, Decision, ManifestRecord, ManifestStats, MaskSummary, Provenance};
use super::prompts::{generate_prompt_pairs, generate_source_prompts, PromptClient, ToyPromptClient};
use super::real::{build_real_triplet, FixedRectLocalizer, Inpainter, Localizer, MeanFillInpainter};
use super::Subset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildConfig {
    pub subset: Subset,
    pub seed: u64,
    pub size: usize,
    /// Synthetic branch: number of source descriptions requested.
    pub n_sources: usize,
    /// Real branch: frames per category.
    pub real_per_category: usize,
    /// Real branch: range of object area fractions.
    pub object_area: (f64, f64),
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            subset: Subset::Synthetic,
            seed: 0,
            size: 32,
            n_sources: 4,
            real_per_category: 8,
            object_area: (0.4, 0.9),
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 || self.size % 16 != 0 {
            return Err(Error::config("dataset.size", format!("{} is not a positive multiple of 16", self.size)));
        }
        let (lo, hi) = self.object_area;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::config("dataset.object_area", "need 0 < lo <= hi <= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildSummary {
    pub records: Vec<ManifestRecord>,
    pub stats: ManifestStats,
    /// Generation failures, skipped and logged.
    pub skipped: Vec<String>,
}

struct MediaSink {
    base: PathBuf,
}

impl MediaSink {
    fn new(manifest: &Path) -> Self {
        let base = manifest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self { base }
    }

    fn path(&self, subset: Subset, idx: usize, part: &str, ext: &str) -> (String, PathBuf) {
        let tag = match subset {
            Subset::Synthetic => "synthetic",
            Subset::Real => "real",
        };
        let rel = format!("media/{tag}_{idx:05}_{part}.{ext}");
        let abs = self.base.join(&rel);
        (rel, abs)
    }
}

/// Toy pipeline for the configured subset; writes media next to the manifest.
pub fn build_dataset(
    config: &BuildConfig,
    thresholds: &FilterThresholds,
    encoders: &EncoderSuite,
    manifest: &Path,
) -> Result<BuildSummary> {
    config.validate()?;
    thresholds.validate()?;
    let categories = toy_categories();
    let (records, skipped) = match config.subset {
        Subset::Synthetic => build_synthetic(
            config,
            thresholds,
            encoders,
            &categories,
            &ToyPromptClient,
            &ToyPairGenerator::new(categories.clone(), config.size),
            manifest,
        )?,
        Subset::Real => (
            build_real(
                config,
                thresholds,
                encoders,
                &categories,
                &FixedRectLocalizer::default(),
                &MeanFillInpainter,
                manifest,
            )?,
            Vec::new(),
        ),
    };
    write_manifest(&records, manifest)?;
    Ok(BuildSummary {
        stats: ManifestStats::from_records(&records),
        records,
        skipped,
    })
}

pub fn build_synthetic(
    config: &BuildConfig,
    thresholds: &FilterThresholds,
    encoders: &EncoderSuite,
    categories: &[SoundCategory],
    client: &dyn PromptClient,
    generator: &dyn PairGenerator,
    manifest: &Path,
) -> Result<(Vec<ManifestRecord>, Vec<String>)> {
    let sink = MediaSink::new(manifest);
    let sources = generate_source_prompts(client, config.n_sources)?;
    let keywords: Vec<String> = categories.iter().flat_map(|c| c.keywords.iter().cloned()).collect();
    let pairs = generate_prompt_pairs(&sources, &keywords, categories, client)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for pair in &pairs {
        let cat = find_category(categories, &pair.category)?;
        for s in seeds_for_pair(pair) {
            let seed = s ^ config.seed;
            let (before, after) = match generate_image_pair(pair, seed, generator) {
                Ok(p) => p,
                Err(Error::Generation(msg)) => {
                    skipped.push(msg);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let audio = quantize_audio(&synth_audio(cat, seed)?)?;
            let m = measure_synthetic(encoders, pair, &before, &after, &audio)?;
            let decision = filter_synthetic(&m, thresholds);
            let idx = records.len();
            let (before_rel, before_abs) = sink.path(Subset::Synthetic, idx, "before", "png");
            let (after_rel, after_abs) = sink.path(Subset::Synthetic, idx, "after", "png");
            let (audio_rel, audio_abs) = sink.path(Subset::Synthetic, idx, "audio", "wav");
            save_png(&before, &before_abs)?;
            save_png(&after, &after_abs)?;
            save_wav(&audio, &audio_abs)?;
            records.push(ManifestRecord {
                before_path: before_rel,
                after_path: after_rel,
                audio_path: audio_rel,
                category: cat.name.clone(),
                subset: Subset::Synthetic,
                seed,
                dir_sim: Some(m.dir_sim),
                iis: Some(m.iis),
                avs: Some(m.avs),
                decision: if decision.keep { Decision::Keep } else { Decision::Discard },
                reasons: decision.reasons,
                provenance: Provenance {
                    p_value: Some(P_VALUE),
                    source_prompt: Some(pair.source_prompt.clone()),
                    target_prompt: Some(pair.target_prompt.clone()),
                    keyword: Some(pair.keyword.clone()),
                    directional_degenerate: m.degenerate,
                    ..Provenance::default()
                },
            });
        }
    }
    Ok((records, skipped))
}

pub fn build_real(
    config: &BuildConfig,
    thresholds: &FilterThresholds,
    encoders: &EncoderSuite,
    categories: &[SoundCategory],
    localizer: &dyn Localizer,
    inpainter: &dyn Inpainter,
    manifest: &Path,
) -> Result<Vec<ManifestRecord>> {
    let sink = MediaSink::new(manifest);
    let mut records = Vec::new();
    for cat in categories {
        let mut rng = stream(config.seed ^ hash_str(&cat.name), "real.frames");
        for _ in 0..config.real_per_category {
            let seed = rng.random::<u32>() as u64;
            let area = rng.random_range(config.object_area.0..=config.object_area.1);
            let (frame, _) = render_object_scene(cat, seed, config.size, area)?;
            let frame = quantize_image(&frame)?;
            let audio = quantize_audio(&synth_audio(cat, seed)?)?;
            let out = build_real_triplet(
                &frame,
                &audio,
                &cat.name,
                seed,
                localizer,
                inpainter,
                encoders,
                thresholds,
            )?;
            let idx = records.len();
            let (after_rel, after_abs) = sink.path(Subset::Real, idx, "after", "png");
            let (audio_rel, audio_abs) = sink.path(Subset::Real, idx, "audio", "wav");
            save_png(&frame, &after_abs)?;
            save_wav(&audio, &audio_abs)?;
            let before_rel = match &out.triplet {
                Some(t) => {
                    let (rel, abs) = sink.path(Subset::Real, idx, "before", "png");
                    save_png(&t.before, &abs)?;
                    rel
                }
                None => after_rel.clone(),
            };
            records.push(ManifestRecord {
                before_path: before_rel,
                after_path: after_rel,
                audio_path: audio_rel,
                category: cat.name.clone(),
                subset: Subset::Real,
                seed,
                dir_sim: None,
                iis: out.measures.map(|m| m.iis),
                avs: out.measures.map(|m| m.avs_original),
                decision: if out.decision.keep { Decision::Keep } else { Decision::Discard },
                reasons: out.decision.reasons,
                provenance: Provenance {
                    avs_inpainted: out.measures.map(|m| m.avs_inpainted),
                    mask: Some(MaskSummary {
                        pixels: out.mask.count(),
                        bbox: out.mask.bounding_box(),
                    }),
                    ..Provenance::default()
                },
            });
        }
    }
    Ok(records)
}
