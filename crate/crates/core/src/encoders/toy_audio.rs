use crate::audio::{log_mel_statistics, AudioClip, MelConfig};
use crate::embedding::{EmbeddingVector, Space};
use crate::error::Result;
use crate::params::ParamSet;
use crate::rng::{normal_matrix, stream};
use crate::tensor::Matrix;

use super::AudioEncoder;

/// Seeded projection of log-mel frame statistics.
///
/// `e = W · φ + b` where `φ` is [`log_mel_statistics`] under the default
/// [`MelConfig`] (8 band means then 8 band maxima), `W[d_a, 16]` has entries
/// `max(0, N(0, 1/16) - 1/4)` and `b[d_a]` has entries `|N(0, 0.05²)|`, both drawn
/// from the `"encoder.audio"` stream. Non-negative weights on non-negative,
/// gain-monotone features make the embedding norm nondecreasing in gain (up
/// to clipping).
pub struct ToyAudioEncoder {
    mel: MelConfig,
    weights: Matrix,
    bias: Vec<f64>,
}

impl ToyAudioEncoder {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mel = MelConfig::default();
        let n_features = 2 * mel.n_mels;
        let mut rng = stream(seed, "encoder.audio");
        let weights = normal_matrix(&mut rng, dim, n_features, 1.0 / (n_features as f64).sqrt())
            .map(|w| (w - 0.25).max(0.0));
        let bias = normal_matrix(&mut rng, 1, dim, 0.05).map(f64::abs).into_vec();
        Self { mel, weights, bias }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn mel_config(&self) -> &MelConfig {
        &self.mel
    }
}

impl AudioEncoder for ToyAudioEncoder {
    fn dim(&self) -> usize {
        self.weights.rows()
    }

    fn encode_audio(&self, clip: &AudioClip) -> Result<EmbeddingVector> {
        let phi = Matrix::from_vec(self.weights.cols(), 1, log_mel_statistics(clip, &self.mel))?;
        let proj = self.weights.matmul(&phi);
        let values = proj.as_slice().iter().zip(&self.bias).map(|(p, b)| p + b).collect();
        EmbeddingVector::new(values, Space::Audio)
    }

    fn fingerprint(&self) -> String {
        let mut p = ParamSet::new();
        p.insert("weights", self.weights.clone());
        p.insert("bias", Matrix::row_vector(&self.bias));
        p.fingerprint()
    }
}
