mod common;

use proptest::prelude::*;
use sonedit::embedding::{EmbeddingVector, Space};
use sonedit::graph::Graph;
use sonedit::losses::{info_nce, info_nce_graph, ldm_loss, ldm_loss_graph, total_loss, LossWeights};
use sonedit::rng::{normal_matrix, stream};
use sonedit::tensor::Matrix;
use sonedit::Error;

use common::rel_close;

fn rows(m: &Matrix) -> Vec<EmbeddingVector> {
    (0..m.rows())
        .map(|r| EmbeddingVector::new(m.row(r).to_vec(), Space::JointVl).unwrap())
        .collect()
}

fn batch_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..=8, 2usize..=16).prop_flat_map(|(n, d)| {
        (
            Just(n),
            Just(d),
            prop::collection::vec(prop_oneof![-1.0..-0.05f64, 0.05..1.0f64], n * d),
            prop::collection::vec(prop_oneof![-1.0..-0.05f64, 0.05..1.0f64], n * d),
        )
    })
}

#[test]
fn ldm_gradient_matches_closed_form() {
    let mut rng = stream(1, "tests.ldm");
    let truth = normal_matrix(&mut rng, 3, 4, 1.0);
    let pred = normal_matrix(&mut rng, 3, 4, 1.0);
    let mut g = Graph::new();
    let t = g.constant(truth.clone());
    let p = g.param(pred.clone());
    let l = ldm_loss_graph(&mut g, t, p).unwrap();
    assert_eq!(g.value(l).item(), ldm_loss(&truth, &pred).unwrap());
    let grads = g.backward(l);
    let analytic = grads.get(p).unwrap();
    let count = truth.len() as f64;
    let h = 1e-6;
    for k in 0..pred.len() {
        let closed = 2.0 * (pred.as_slice()[k] - truth.as_slice()[k]) / count;
        assert!((analytic.as_slice()[k] - closed).abs() < 1e-12);
        let (mut up, mut down) = (pred.clone(), pred.clone());
        up.as_mut_slice()[k] += h;
        down.as_mut_slice()[k] -= h;
        let fd = (ldm_loss(&truth, &up).unwrap() - ldm_loss(&truth, &down).unwrap()) / (2.0 * h);
        assert!((fd - closed).abs() < 1e-6, "entry {k}: {fd} vs {closed}");
    }
}

#[test]
fn ldm_rejects_shape_mismatch() {
    assert!(matches!(ldm_loss(&Matrix::zeros(2, 2), &Matrix::zeros(4, 1)), Err(Error::Shape(_))));
}

#[test]
fn info_nce_gradient_wrt_queries() {
    let mut rng = stream(2, "tests.nce");
    let qv = normal_matrix(&mut rng, 4, 8, 1.0);
    let qi = normal_matrix(&mut rng, 4, 8, 1.0);
    let mut g = Graph::new();
    let a = g.param(qv.clone());
    let b = g.constant(qi.clone());
    let l = info_nce_graph(&mut g, a, b, 1.0).unwrap();
    let grads = g.backward(l);
    let analytic = grads.get(a).unwrap();
    let h = 1e-5;
    let value = |m: &Matrix| info_nce(&rows(m), &rows(&qi), 1.0).unwrap();
    for k in 0..qv.len() {
        let (mut up, mut down) = (qv.clone(), qv.clone());
        up.as_mut_slice()[k] += h;
        down.as_mut_slice()[k] -= h;
        let fd = (value(&up) - value(&down)) / (2.0 * h);
        assert!(rel_close(analytic.as_slice()[k], fd, 1e-4, 1e-6), "entry {k}: {} vs {fd}", analytic.as_slice()[k]);
    }
}

#[test]
fn info_nce_zero_norm_is_a_numeric_error() {
    let ok = EmbeddingVector::new(vec![1.0, 0.0], Space::JointVl).unwrap();
    let zero = EmbeddingVector::new(vec![0.0, 0.0], Space::JointVl).unwrap();
    assert!(matches!(info_nce(&[zero.clone()], &[ok.clone()], 1.0), Err(Error::Numeric(_))));
    assert!(matches!(info_nce(&[ok], &[zero], 1.0), Err(Error::Numeric(_))));
}

#[test]
fn info_nce_rejects_mixed_spaces_and_sizes() {
    let a = EmbeddingVector::new(vec![1.0, 0.5], Space::JointVl).unwrap();
    let b = EmbeddingVector::new(vec![1.0, 0.5], Space::JointAv).unwrap();
    assert!(matches!(info_nce(&[a.clone()], &[b], 1.0), Err(Error::SpaceMismatch { .. })));
    assert!(info_nce(&[a.clone(), a.clone()], &[a.clone()], 1.0).is_err());
    assert!(info_nce(&[], &[], 1.0).is_err());
}

#[test]
fn composition_examples() {
    let r = total_loss(0.5, 0.3, 0.2, &LossWeights { lambda_nce: 1.0, lambda_l1: 1.0 });
    assert!((r.l_total - 1.0).abs() < 1e-15);
    let r = total_loss(0.7, 0.3, 0.2, &LossWeights { lambda_nce: 0.0, lambda_l1: 0.0 });
    assert_eq!(r.l_total, r.l_ldm);
    assert!(LossWeights { lambda_nce: -1.0, lambda_l1: 0.0 }.validate().is_err());
    assert!(LossWeights { lambda_nce: 1.0, lambda_l1: f64::NAN }.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn info_nce_is_permutation_equivariant((n, d, a, b) in batch_strategy(), shift in 0usize..8) {
        let qv = Matrix::from_vec(n, d, a).unwrap();
        let qi = Matrix::from_vec(n, d, b).unwrap();
        let (rv, ri) = (rows(&qv), rows(&qi));
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + shift) % n).collect();
        let mut seen = perm.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assume!(seen.len() == n);
        let pv: Vec<_> = perm.iter().map(|&i| rv[i].clone()).collect();
        let pi: Vec<_> = perm.iter().map(|&i| ri[i].clone()).collect();
        let base = info_nce(&rv, &ri, 1.0).unwrap();
        let permuted = info_nce(&pv, &pi, 1.0).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-9);
    }

    #[test]
    fn info_nce_stays_within_bounds((n, d, a, b) in batch_strategy()) {
        let qv = rows(&Matrix::from_vec(n, d, a).unwrap());
        let qi = rows(&Matrix::from_vec(n, d, b).unwrap());
        let v = info_nce(&qv, &qi, 1.0).unwrap();
        prop_assert!(v >= -2.0 && v <= (n as f64).ln() + 2.0, "value {v} for n = {n}");
    }

    #[test]
    fn info_nce_single_pair_is_zero(a in prop::collection::vec(0.1..1.0f64, 6), b in prop::collection::vec(-1.0..-0.1f64, 6)) {
        let qa = EmbeddingVector::new(a, Space::JointVl).unwrap();
        let qb = EmbeddingVector::new(b, Space::JointVl).unwrap();
        prop_assert!(info_nce(&[qa], &[qb], 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn total_loss_composes_exactly(
        ldm in 0.0..10.0f64, nce in -2.0..5.0f64, l1 in 0.0..50.0f64,
        wn in 0.0..3.0f64, wl in 0.0..1.0f64,
    ) {
        let r = total_loss(ldm, nce, l1, &LossWeights { lambda_nce: wn, lambda_l1: wl });
        prop_assert_eq!(r.l_total, r.l_ldm + wn * r.l_nce + wl * r.l_l1);
        prop_assert_eq!((r.l_ldm, r.l_nce, r.l_l1), (ldm, nce, l1));
    }

    #[test]
    fn total_loss_is_monotone_in_nce_weight(
        ldm in 0.0..10.0f64, nce in 0.0..5.0f64, l1 in 0.0..50.0f64,
        w in 0.0..3.0f64, dw in 0.0..3.0f64,
    ) {
        let lo = total_loss(ldm, nce, l1, &LossWeights { lambda_nce: w, lambda_l1: 0.01 });
        let hi = total_loss(ldm, nce, l1, &LossWeights { lambda_nce: w + dw, lambda_l1: 0.01 });
        prop_assert!(hi.l_total >= lo.l_total);
    }
}
