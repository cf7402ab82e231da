use crate::embedding::{EmbeddingVector, Space};
use crate::error::Result;
use crate::params::ParamSet;
use crate::raster::{patch_statistics, Image, PATCH_FEATURES};
use crate::rng::{normal_matrix, stream};
use crate::tensor::Matrix;

use super::ImageEncoder;

/// Seeded projection of 4×4 patch mean/variance grids.
///
/// `e = W · ψ + b` where `ψ` is [`patch_statistics`] (96 features),
/// `W[d, 96]` has entries `N(0, 1/96)` and `b[d]` entries `N(0, 0.05²)`, drawn
/// in that order from the `"encoder.image"` stream.
pub struct ToyImageEncoder {
    weights: Matrix,
    bias: Vec<f64>,
}

pub const IMAGE_BIAS_STD: f64 = 0.05;

impl ToyImageEncoder {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut rng = stream(seed, "encoder.image");
        let weights = normal_matrix(&mut rng, dim, PATCH_FEATURES, 1.0 / (PATCH_FEATURES as f64).sqrt());
        let bias = normal_matrix(&mut rng, 1, dim, IMAGE_BIAS_STD).into_vec();
        Self { weights, bias }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

impl ImageEncoder for ToyImageEncoder {
    fn dim(&self) -> usize {
        self.weights.rows()
    }

    fn encode_image(&self, img: &Image) -> Result<EmbeddingVector> {
        let psi = Matrix::from_vec(PATCH_FEATURES, 1, patch_statistics(img))?;
        let proj = self.weights.matmul(&psi);
        let values = proj.as_slice().iter().zip(&self.bias).map(|(p, b)| p + b).collect();
        EmbeddingVector::new(values, Space::JointVl)
    }

    fn fingerprint(&self) -> String {
        let mut p = ParamSet::new();
        p.insert("weights", self.weights.clone());
        p.insert("bias", Matrix::row_vector(&self.bias));
        p.fingerprint()
    }
}
