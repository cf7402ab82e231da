use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::media::{load_png, load_wav};
use crate::raster::Image;
use crate::toyworld::Rect;

use super::filter::{filter_real, filter_synthetic, FilterDecision, FilterThresholds, RealMeasures, Reason, SyntheticMeasures};
use super::Subset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Discard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub pixels: usize,
    pub bbox: Option<Rect>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Provenance {
    pub p_value: Option<f64>,
    pub source_prompt: Option<String>,
    pub target_prompt: Option<String>,
    pub keyword: Option<String>,
    pub directional_degenerate: bool,
    pub avs_inpainted: Option<f64>,
    pub mask: Option<MaskSummary>,
}

/// One manifest line. Media paths are relative to the manifest's directory.
/// `avs` is measured against `after`; real records keep the inpainted-frame
/// similarity in the provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub before_path: String,
    pub after_path: String,
    pub audio_path: String,
    pub category: String,
    pub subset: Subset,
    pub seed: u64,
    pub dir_sim: Option<f64>,
    pub iis: Option<f64>,
    pub avs: Option<f64>,
    pub decision: Decision,
    pub reasons: Vec<Reason>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl ManifestRecord {
    pub fn kept(&self) -> bool {
        self.decision == Decision::Keep
    }

    /// Re-applies the filter rules to the recorded measurements.
    pub fn reevaluate(&self, t: &FilterThresholds) -> Result<FilterDecision> {
        let missing = |f: &str| Error::InvalidInput(format!("record for {} lacks `{f}`", self.after_path));
        match self.subset {
            Subset::Synthetic => Ok(filter_synthetic(
                &SyntheticMeasures {
                    dir_sim: self.dir_sim.ok_or_else(|| missing("dir_sim"))?,
                    degenerate: self.provenance.directional_degenerate,
                    iis: self.iis.ok_or_else(|| missing("iis"))?,
                    avs: self.avs.ok_or_else(|| missing("avs"))?,
                },
                t,
            )),
            Subset::Real => {
                let localized = self.provenance.mask.is_some_and(|m| m.pixels > 0);
                if !localized {
                    return Ok(filter_real(None, t));
                }
                Ok(filter_real(
                    Some(&RealMeasures {
                        iis: self.iis.ok_or_else(|| missing("iis"))?,
                        avs_original: self.avs.ok_or_else(|| missing("avs"))?,
                        avs_inpainted: self.provenance.avs_inpainted.ok_or_else(|| missing("avs_inpainted"))?,
                    }),
                    t,
                ))
            }
        }
    }
}

pub fn write_manifest(records: &[ManifestRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines are skipped; anything else must parse as a record.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Loads `(before, after, audio)` for a record.
pub fn load_triplet(record: &ManifestRecord, base_dir: &Path) -> Result<(Image, Image, AudioClip)> {
    Ok((
        load_png(&base_dir.join(&record.before_path))?,
        load_png(&base_dir.join(&record.after_path))?,
        load_wav(&base_dir.join(&record.audio_path))?,
    ))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestStats {
    pub total: usize,
    pub kept: usize,
    pub discarded: usize,
    pub synthetic: usize,
    pub real: usize,
    pub kept_synthetic: usize,
    pub kept_real: usize,
    pub kept_by_category: BTreeMap<String, usize>,
    pub discards_by_rule: BTreeMap<String, usize>,
}

impl ManifestStats {
    pub fn from_records(records: &[ManifestRecord]) -> Self {
        let mut s = Self {
            total: records.len(),
            ..Self::default()
        };
        for r in records {
            let kept = r.kept();
            match r.subset {
                Subset::Synthetic => {
                    s.synthetic += 1;
                    s.kept_synthetic += kept as usize;
                }
                Subset::Real => {
                    s.real += 1;
                    s.kept_real += kept as usize;
                }
            }
            if kept {
                s.kept += 1;
                *s.kept_by_category.entry(r.category.clone()).or_default() += 1;
            } else {
                s.discarded += 1;
                for reason in &r.reasons {
                    let key = serde_json::to_value(reason.rule)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default();
                    *s.discards_by_rule.entry(key).or_default() += 1;
                }
            }
        }
        s
    }
}
