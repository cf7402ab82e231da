use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::raster::{Image, CHANNELS};
use crate::rng::stream;
use crate::tensor::Matrix;

use rand::Rng;

/// Latent grid: one row per latent pixel, `c_lat` columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub height: usize,
    pub width: usize,
    pub values: Matrix,
}

impl Latent {
    pub fn new(height: usize, width: usize, values: Matrix) -> Result<Self> {
        if values.rows() != height * width {
            return Err(Error::shape(format!(
                "latent grid {height}x{width} needs {} rows, got {}",
                height * width,
                values.rows()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: Matrix::zeros(self.values.rows(), self.values.cols()),
        }
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }
}

pub const FACTOR: usize = 4;
pub const LATENT_CHANNELS: usize = 4;

/// Fixed linear patch autoencoder with downsampling factor 4.
///
/// Each 4×4×3 patch `p` maps to `z = E (p - 0.5)` where the rows of `E` are
/// orthonormal: the three per-channel patch means (scaled to unit norm) and a
/// luminance ramp whose orientation is seeded. Decoding applies `Eᵀ`, adds
/// 0.5 back and clamps to `[0, 1]`, so `decode ∘ encode` is an orthogonal
/// projection onto smooth patch content.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchAutoencoder {
    basis: Matrix,
}

impl PatchAutoencoder {
    pub fn new(seed: u64) -> Self {
        let patch = FACTOR * FACTOR * CHANNELS;
        let mut basis = Matrix::zeros(LATENT_CHANNELS, patch);
        let idx = |y: usize, x: usize, c: usize| (y * FACTOR + x) * CHANNELS + c;
        let inv = 1.0 / (FACTOR * FACTOR) as f64;
        for c in 0..CHANNELS {
            for y in 0..FACTOR {
                for x in 0..FACTOR {
                    basis.set(c, idx(y, x, c), inv.sqrt());
                }
            }
        }
        let theta = stream(seed, "autoencoder.ramp").random_range(0.0..std::f64::consts::TAU);
        let centre = (FACTOR as f64 - 1.0) / 2.0;
        let mut ramp = vec![0.0; patch];
        for y in 0..FACTOR {
            for x in 0..FACTOR {
                let v = theta.cos() * (x as f64 - centre) + theta.sin() * (y as f64 - centre);
                for c in 0..CHANNELS {
                    ramp[idx(y, x, c)] = v;
                }
            }
        }
        let n = ramp.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, v) in ramp.iter().enumerate() {
            basis.set(3, i, v / n);
        }
        Self { basis }
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn latent_channels(&self) -> usize {
        LATENT_CHANNELS
    }

    pub fn encode(&self, img: &Image) -> Result<Latent> {
        if img.height() % FACTOR != 0 || img.width() % FACTOR != 0 {
            return Err(Error::shape(format!(
                "image {}x{} is not divisible by {FACTOR}",
                img.height(),
                img.width()
            )));
        }
        let (lh, lw) = (img.height() / FACTOR, img.width() / FACTOR);
        let patch = FACTOR * FACTOR * CHANNELS;
        let patches = Matrix::from_fn(lh * lw, patch, |r, i| {
            let (gy, gx) = (r / lw, r % lw);
            let c = i % CHANNELS;
            let px = i / CHANNELS;
            let (y, x) = (px / FACTOR, px % FACTOR);
            img.get(gy * FACTOR + y, gx * FACTOR + x, c) - 0.5
        });
        Latent::new(lh, lw, patches.matmul_t(&self.basis))
    }

    pub fn decode(&self, latent: &Latent) -> Result<Image> {
        if latent.channels() != LATENT_CHANNELS {
            return Err(Error::shape(format!(
                "latent has {} channels, expected {LATENT_CHANNELS}",
                latent.channels()
            )));
        }
        let patches = latent.values.matmul(&self.basis);
        let (h, w) = (latent.height * FACTOR, latent.width * FACTOR);
        let mut pixels = vec![0.0; h * w * CHANNELS];
        for r in 0..patches.rows() {
            let (gy, gx) = (r / latent.width, r % latent.width);
            for (i, v) in patches.row(r).iter().enumerate() {
                let c = i % CHANNELS;
                let px = i / CHANNELS;
                let (y, x) = (gy * FACTOR + px / FACTOR, gx * FACTOR + px % FACTOR);
                pixels[(y * w + x) * CHANNELS + c] = v + 0.5;
            }
        }
        Image::from_clamped(h, w, pixels)
    }

    pub fn fingerprint(&self) -> String {
        let mut p = ParamSet::new();
        p.insert("basis", self.basis.clone());
        p.fingerprint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::render_scene;

    #[test]
    fn shapes_and_orthonormal_basis() {
        let ae = PatchAutoencoder::new(3);
        let g = ae.basis().matmul_t(ae.basis());
        let id = Matrix::from_fn(4, 4, |r, c| if r == c { 1.0 } else { 0.0 });
        assert!(g.max_abs_diff(&id) < 1e-12);
        let img = render_scene(5, 1, 32, 32).unwrap();
        let z = ae.encode(&img).unwrap();
        assert_eq!((z.height, z.width, z.channels()), (8, 8, 4));
    }

    #[test]
    fn reconstructs_smooth_scene() {
        let ae = PatchAutoencoder::new(3);
        let img = render_scene(9, 2, 32, 32).unwrap();
        let rec = ae.decode(&ae.encode(&img).unwrap()).unwrap();
        assert!(rec.psnr(&img) > 25.0, "psnr {}", rec.psnr(&img));
    }
}
