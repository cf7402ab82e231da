use crate::audio::AudioClip;
use crate::embedding::cosine;
use crate::encoders::EncoderSuite;
use crate::error::{Error, Result};
use crate::media::quantize_image;
use crate::raster::{Image, CHANNELS};
use crate::toyworld::Rect;

use super::filter::{filter_real, FilterDecision, FilterThresholds, RealMeasures};
use super::{EditTriplet, Subset};

/// Binary per-pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!("mask of {} bits for {height}x{width}", bits.len())));
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_rect(height: usize, width: usize, rect: Rect) -> Self {
        let bits = (0..height * width).map(|i| rect.contains(i / width, i % width)).collect();
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn bounding_box(&self) -> Option<Rect> {
        let mut bb: Option<Rect> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    let r = bb.get_or_insert(Rect { y0: y, x0: x, y1: y + 1, x1: x + 1 });
                    r.y0 = r.y0.min(y);
                    r.x0 = r.x0.min(x);
                    r.y1 = r.y1.max(y + 1);
                    r.x1 = r.x1.max(x + 1);
                }
            }
        }
        bb
    }
}

/// Finds the sounding object in a frame.
pub trait Localizer {
    fn localize(&self, img: &Image, audio: &AudioClip) -> Result<Mask>;
}

/// Fills the masked region.
pub trait Inpainter {
    fn inpaint(&self, img: &Image, mask: &Mask) -> Result<Image>;
}

/// Always returns the same box, given as fractions of the frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedRectLocalizer {
    pub top: f64,
    pub left: f64,
    pub bottom: f64,
    pub right: f64,
}

impl Default for FixedRectLocalizer {
    fn default() -> Self {
        Self {
            top: 0.1,
            left: 0.1,
            bottom: 0.9,
            right: 0.9,
        }
    }
}

impl Localizer for FixedRectLocalizer {
    fn localize(&self, img: &Image, _audio: &AudioClip) -> Result<Mask> {
        let (h, w) = (img.height() as f64, img.width() as f64);
        let px = |f: f64, n: f64| (f.clamp(0.0, 1.0) * n).round() as usize;
        let rect = Rect {
            y0: px(self.top, h),
            x0: px(self.left, w),
            y1: px(self.bottom, h),
            x1: px(self.right, w),
        };
        Ok(Mask::from_rect(img.height(), img.width(), rect))
    }
}

/// Replaces masked pixels with the per-channel mean of the unmasked ones.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanFillInpainter;

impl Inpainter for MeanFillInpainter {
    fn inpaint(&self, img: &Image, mask: &Mask) -> Result<Image> {
        if mask.height() != img.height() || mask.width() != img.width() {
            return Err(Error::shape("mask and image differ in size"));
        }
        let mut sum = [0.0; CHANNELS];
        let mut n = 0usize;
        for y in 0..img.height() {
            for x in 0..img.width() {
                if !mask.get(y, x) {
                    n += 1;
                    for (c, s) in sum.iter_mut().enumerate() {
                        *s += img.get(y, x, c);
                    }
                }
            }
        }
        let fill = sum.map(|s| if n == 0 { 0.5 } else { s / n as f64 });
        img.map(|y, x, c, p| if mask.get(y, x) { fill[c] } else { p })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealOutcome {
    pub decision: FilterDecision,
    pub measures: Option<RealMeasures>,
    pub mask: Mask,
    /// Present whenever a mask was found, kept or not.
    pub triplet: Option<EditTriplet>,
}

/// Localize, inpaint, then filter. `before` is the inpainted frame and
/// `after` the original.
#[allow(clippy::too_many_arguments)]
pub fn build_real_triplet(
    img: &Image,
    audio: &AudioClip,
    category: &str,
    seed: u64,
    localizer: &dyn Localizer,
    inpainter: &dyn Inpainter,
    encoders: &EncoderSuite,
    thresholds: &FilterThresholds,
) -> Result<RealOutcome> {
    let mask = localizer.localize(img, audio)?;
    if mask.height() != img.height() || mask.width() != img.width() {
        return Err(Error::shape("localizer mask does not match the frame"));
    }
    if mask.is_empty() {
        return Ok(RealOutcome {
            decision: filter_real(None, thresholds),
            measures: None,
            mask,
            triplet: None,
        });
    }
    let inpainted = quantize_image(&inpainter.inpaint(img, &mask)?)?;
    if !inpainted.same_dims(img) {
        return Err(Error::shape("inpainter changed the frame size"));
    }
    let a = encoders.joint.embed_audio(audio)?;
    let measures = RealMeasures {
        iis: cosine(&encoders.image.encode_image(&inpainted)?, &encoders.image.encode_image(img)?)?,
        avs_original: cosine(&a, &encoders.joint.embed_image(img)?)?,
        avs_inpainted: cosine(&a, &encoders.joint.embed_image(&inpainted)?)?,
    };
    let triplet = EditTriplet::new(
        inpainted,
        img.clone(),
        audio.clone(),
        category,
        Subset::Real,
        seed,
        Some(mask.clone()),
    )?;
    Ok(RealOutcome {
        decision: filter_real(Some(&measures), thresholds),
        measures: Some(measures),
        mask,
        triplet: Some(triplet),
    })
}
