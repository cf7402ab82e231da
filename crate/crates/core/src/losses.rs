//! Training objectives: noise regression, audio-image contrastive alignment
//! and an ℓ1 penalty on the audio tokens.
//!
//! Each objective has a plain evaluation on values and a graph form used by
//! the trainer; both compute the same quantity.

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingVector};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_nce: f64,
    pub lambda_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_nce: 1.0,
            lambda_l1: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("lambda_nce", self.lambda_nce), ("lambda_l1", self.lambda_l1)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("loss.{key}"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_ldm: f64,
    pub l_nce: f64,
    pub l_l1: f64,
    pub l_total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l_ldm, self.l_nce, self.l_l1, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `l_ldm + λ_nce l_nce + λ_l1 l_l1`, evaluated in exactly that order.
pub fn total_loss(l_ldm: f64, l_nce: f64, l_l1: f64, weights: &LossWeights) -> LossReport {
    LossReport {
        l_ldm,
        l_nce,
        l_l1,
        l_total: l_ldm + weights.lambda_nce * l_nce + weights.lambda_l1 * l_l1,
    }
}

/// Mean squared error over all entries.
pub fn ldm_loss(eps_true: &Matrix, eps_pred: &Matrix) -> Result<f64> {
    if eps_true.shape() != eps_pred.shape() {
        return Err(Error::shape(format!(
            "noise {:?} vs prediction {:?}",
            eps_true.shape(),
            eps_pred.shape()
        )));
    }
    if eps_true.is_empty() {
        return Err(Error::shape("empty noise tensor"));
    }
    let sum: f64 = eps_true
        .as_slice()
        .iter()
        .zip(eps_pred.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / eps_true.len() as f64)
}

pub fn ldm_loss_graph(g: &mut Graph, eps_true: Var, eps_pred: Var) -> Result<Var> {
    if g.value(eps_true).shape() != g.value(eps_pred).shape() {
        return Err(Error::shape("noise and prediction shapes differ"));
    }
    let d = g.sub(eps_pred, eps_true);
    let sq = g.mul(d, d);
    Ok(g.mean(sq))
}

/// `(1/N) Σ_j -log softmax_k(cos(qv_j, qi_k) / τ)[j]`. With `τ = 1` the
/// cosines enter the softmax as they are.
pub fn info_nce(qv: &[EmbeddingVector], qi: &[EmbeddingVector], temperature: f64) -> Result<f64> {
    check_batches(qv.len(), qi.len(), temperature)?;
    let n = qv.len();
    let mut total = 0.0;
    for a in qv {
        let logits = qi
            .iter()
            .map(|b| Ok(cosine(a, b)? / temperature))
            .collect::<Result<Vec<f64>>>()?;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse;
    }
    for (a, b) in qv.iter().zip(qi) {
        total -= cosine(a, b)? / temperature;
    }
    Ok(total / n as f64)
}

fn check_batches(nv: usize, ni: usize, temperature: f64) -> Result<()> {
    if nv == 0 || nv != ni {
        return Err(Error::shape(format!("info_nce batches of {nv} and {ni}")));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::config("loss.temperature", "must be positive"));
    }
    Ok(())
}

/// Graph form over `[N, d]` row batches.
pub fn info_nce_graph(g: &mut Graph, qv: Var, qi: Var, temperature: f64) -> Result<Var> {
    let (nv, dv) = g.value(qv).shape();
    let (ni, di) = g.value(qi).shape();
    check_batches(nv, ni, temperature)?;
    if dv != di {
        return Err(Error::shape(format!("info_nce dims {dv} and {di}")));
    }
    for v in [qv, qi] {
        let m = g.value(v);
        if (0..m.rows()).any(|r| m.row(r).iter().all(|x| *x == 0.0)) {
            return Err(Error::Numeric("info_nce got a zero-norm embedding".into()));
        }
    }
    let a = g.normalize_rows(qv);
    let b = g.normalize_rows(qi);
    let bt = g.transpose(b);
    let s = g.matmul(a, bt);
    let s = g.scale(s, 1.0 / temperature);
    let ls = g.log_softmax_rows(s);
    let d = g.diag(ls);
    let m = g.mean(d);
    Ok(g.scale(m, -1.0))
}

pub fn l1_token_reg(tokens: &Matrix, reduction: L1Reduction) -> f64 {
    let s: f64 = tokens.as_slice().iter().map(|v| v.abs()).sum();
    match reduction {
        L1Reduction::Sum => s,
        L1Reduction::Mean => s / tokens.len().max(1) as f64,
    }
}

pub fn l1_token_reg_graph(g: &mut Graph, tokens: Var, reduction: L1Reduction) -> Var {
    let a = g.abs(tokens);
    match reduction {
        L1Reduction::Sum => g.sum(a),
        L1Reduction::Mean => g.mean(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Space;

    fn vl(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec(), Space::JointVl).unwrap()
    }

    #[test]
    fn ldm_hand_values() {
        let z = Matrix::zeros(2, 2);
        assert_eq!(ldm_loss(&z, &z).unwrap(), 0.0);
        assert_eq!(ldm_loss(&z, &Matrix::filled(2, 2, 1.0)).unwrap(), 1.0);
        assert!(ldm_loss(&z, &Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn nce_orthogonal_pairs() {
        let q = [vl(&[1.0, 0.0]), vl(&[0.0, 1.0])];
        let v = info_nce(&q, &q, 1.0).unwrap();
        let expect = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn nce_single_pair_is_zero() {
        assert!(info_nce(&[vl(&[1.0, 2.0])], &[vl(&[-3.0, 0.5])], 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn nce_rejects_zero_vectors_in_graph() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::from_vec(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap());
        let b = g.constant(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        assert!(matches!(info_nce_graph(&mut g, a, b, 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn l1_hand_value() {
        let t = Matrix::from_vec(2, 2, vec![1.0, -1.0, 2.0, 0.0]).unwrap();
        assert_eq!(l1_token_reg(&t, L1Reduction::Sum), 4.0);
        assert_eq!(l1_token_reg(&t, L1Reduction::Mean), 1.0);
    }

    #[test]
    fn composition() {
        let r = total_loss(0.5, 0.3, 0.2, &LossWeights { lambda_nce: 1.0, lambda_l1: 1.0 });
        assert!((r.l_total - 1.0).abs() < 1e-15);
        let r = total_loss(0.5, 0.3, 0.2, &LossWeights { lambda_nce: 0.0, lambda_l1: 0.0 });
        assert_eq!(r.l_total, 0.5);
    }
}
