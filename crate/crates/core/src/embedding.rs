//! Space-tagged embedding vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which embedding space a vector lives in. Vectors from different spaces are
/// never comparable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Space {
    /// Audio-only encoder output.
    Audio,
    /// Joint vision-language space (text projections and image embeddings).
    JointVl,
    /// Joint audio-visual space.
    JointAv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    space: Space,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, space: Space) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("embedding must have dim >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("embedding contains non-finite entries".into()));
        }
        Ok(Self { values, space })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise difference `self - other`, keeping the shared space tag.
    pub fn delta(&self, other: &Self) -> Result<Vec<f64>> {
        check_compatible(self, other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }
}

fn check_compatible(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<()> {
    if a.space != b.space {
        return Err(Error::SpaceMismatch {
            left: a.space,
            right: b.space,
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "embedding dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Cosine similarity of two raw vectors. Zero-norm inputs are an error.
pub fn cosine_raw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vector dims differ: {} vs {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero-norm vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of two embeddings from the same space.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_compatible(a, b)?;
    cosine_raw(&a.values, &b.values)
}
