//! RGB images with values in `[0, 1]` and the patch statistics used by the
//! toy image encoders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const MIN_SIDE: usize = 8;
/// Side of the cell grid used for patch statistics.
pub const GRID: usize = 4;

/// Row-major `H × W × 3` pixel buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::InvalidInput(format!(
                "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::shape(format!(
                "pixel buffer of {} does not match {height}x{width}x{CHANNELS}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image from any values, clamping each into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, mut pixels: Vec<f64>) -> Result<Self> {
        for p in pixels.iter_mut() {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Self::from_clamped(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Applies `f(y, x, c, value)` to every pixel, clamping the result.
    pub fn map(&self, mut f: impl FnMut(usize, usize, usize, f64) -> f64) -> Result<Self> {
        Self::from_fn(self.height, self.width, |y, x, c| f(y, x, c, self.get(y, x, c)))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Peak signal-to-noise ratio in dB against `other` (peak 1.0).
    pub fn psnr(&self, other: &Image) -> f64 {
        let mse = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.pixels.len() as f64;
        if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        }
    }

    /// Per-channel mean over the whole image.
    pub fn channel_means(&self) -> [f64; CHANNELS] {
        let mut out = [0.0; CHANNELS];
        for px in self.pixels.chunks(CHANNELS) {
            for (o, v) in out.iter_mut().zip(px) {
                *o += v;
            }
        }
        let n = (self.height * self.width) as f64;
        out.map(|v| v / n)
    }
}

/// Statistics over a `GRID × GRID` cell partition.
///
/// Cell `(gy, gx)` covers rows `gy*H/GRID .. (gy+1)*H/GRID` (integer division)
/// and the analogous columns. The feature at index
/// `((gy * GRID + gx) * 3 + c) * 2` is the cell mean of channel `c` minus 0.5,
/// and the following index is the population variance of that channel.
pub fn patch_statistics(img: &Image) -> Vec<f64> {
    let mut out = Vec::with_capacity(GRID * GRID * CHANNELS * 2);
    for gy in 0..GRID {
        let (y0, y1) = (gy * img.height / GRID, (gy + 1) * img.height / GRID);
        for gx in 0..GRID {
            let (x0, x1) = (gx * img.width / GRID, (gx + 1) * img.width / GRID);
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            for c in 0..CHANNELS {
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += img.get(y, x, c);
                    }
                }
                let mean = sum / count;
                let mut var = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let d = img.get(y, x, c) - mean;
                        var += d * d;
                    }
                }
                out.push(mean - 0.5);
                out.push(var / count);
            }
        }
    }
    out
}

pub const PATCH_FEATURES: usize = GRID * GRID * CHANNELS * 2;
