mod common;

use std::io::Cursor;
use std::path::Path;

use proptest::prelude::*;
use sonedit::audio::AudioClip;
use sonedit::diffusion::SamplerConfig;
use sonedit::embedding::{cosine, EmbeddingVector, Space};
use sonedit::encoders::{ImageEncoder, JointEmbedder};
use sonedit::eval::{avs, evaluate_dataset, fid, iis, mos_aggregate_reader, tvs, volume_sweep, CategoryTexts};
use sonedit::pipeline::EditModel;
use sonedit::raster::Image;
use sonedit::rng::{normal_matrix, stream};
use sonedit::tensor::Matrix;
use sonedit::Error;

use common::{eval_samples, small_model_config, toy_triplets};

/// Channel means as a JOINT_VL embedding.
struct MeanColour;

impl ImageEncoder for MeanColour {
    fn dim(&self) -> usize {
        3
    }

    fn encode_image(&self, img: &Image) -> sonedit::Result<EmbeddingVector> {
        EmbeddingVector::new(img.channel_means().to_vec(), Space::JointVl)
    }

    fn fingerprint(&self) -> String {
        "mean-colour".into()
    }
}

/// Audio maps to a fixed colour direction set by its first sample's sign.
struct ColourJoint;

impl JointEmbedder for ColourJoint {
    fn dim(&self) -> usize {
        3
    }

    fn embed_audio(&self, clip: &AudioClip) -> sonedit::Result<EmbeddingVector> {
        let v = if clip.samples()[0] >= 0.0 { vec![1.0, 0.0, 0.0] } else { vec![0.0, 1.0, 0.0] };
        EmbeddingVector::new(v, Space::JointAv)
    }

    fn embed_image(&self, img: &Image) -> sonedit::Result<EmbeddingVector> {
        EmbeddingVector::new(img.channel_means().to_vec(), Space::JointAv)
    }

    fn fingerprint(&self) -> String {
        "colour-joint".into()
    }
}

fn solid(rgb: [f64; 3]) -> Image {
    Image::from_fn(8, 8, |_, _, c| rgb[c]).unwrap()
}

#[test]
fn metric_fixture_examples() {
    let red = solid([0.8, 0.0, 0.0]);
    let dim_red = solid([0.2, 0.0, 0.0]);
    let green = solid([0.0, 0.6, 0.0]);
    let up = AudioClip::new(vec![0.5; 64], 16_000).unwrap();
    let down = AudioClip::new(vec![-0.5; 64], 16_000).unwrap();

    assert!((avs(&ColourJoint, &up, &red).unwrap() - 1.0).abs() <= 1e-6);
    assert!(avs(&ColourJoint, &down, &red).unwrap().abs() <= 1e-6);
    assert!((iis(&MeanColour, &red, &red).unwrap() - 1.0).abs() <= 1e-6);
    assert!((iis(&MeanColour, &red, &dim_red).unwrap() - 1.0).abs() <= 1e-6);
    assert!(iis(&MeanColour, &red, &green).unwrap().abs() <= 1e-6);

    let red_text = EmbeddingVector::new(vec![2.0, 0.0, 0.0], Space::JointVl).unwrap();
    assert!((tvs(&red_text, &MeanColour, &dim_red).unwrap() - 1.0).abs() <= 1e-6);
    assert!(tvs(&red_text, &MeanColour, &green).unwrap().abs() <= 1e-6);
    let wrong = EmbeddingVector::new(vec![2.0, 0.0, 0.0], Space::Audio).unwrap();
    assert!(matches!(tvs(&wrong, &MeanColour, &red), Err(Error::SpaceMismatch { .. })));

    let per_sample = [
        avs(&ColourJoint, &up, &red).unwrap(),
        avs(&ColourJoint, &down, &red).unwrap(),
        avs(&ColourJoint, &up, &solid([0.3, 0.3, 0.0])).unwrap(),
    ];
    let mean = per_sample.iter().sum::<f64>() / 3.0;
    assert!((mean - (1.0 + 0.0 + 0.5f64.sqrt()) / 3.0).abs() < 1e-12);
}

#[test]
fn cosine_matches_a_brute_force_oracle() {
    let mut rng = stream(21, "tests.cosine");
    for _ in 0..200 {
        let m = normal_matrix(&mut rng, 2, 12, 1.0);
        let (a, b) = (m.row(0).to_vec(), m.row(1).to_vec());
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let ea = EmbeddingVector::new(a, Space::JointVl).unwrap();
        let eb = EmbeddingVector::new(b, Space::JointVl).unwrap();
        let c = cosine(&ea, &eb).unwrap();
        assert!((c - dot / (na * nb)).abs() <= 1e-9);
        assert_eq!(c, cosine(&eb, &ea).unwrap());
    }
}

#[test]
fn fid_rejects_mismatched_dimensions() {
    let mut rng = stream(1, "tests.fid");
    let a = normal_matrix(&mut rng, 20, 3, 1.0);
    let b = normal_matrix(&mut rng, 20, 4, 1.0);
    assert!(fid(&a, &b).is_err());
    assert!(fid(&a, &Matrix::zeros(0, 3)).is_err());
}

#[test]
fn mos_examples() {
    let p = Path::new("ratings.csv");
    let header = "rater_id,sample_id,method,question,rating\n";
    let one = mos_aggregate_reader(Cursor::new(format!("{header}r1,s1,m,Q1,4\n")), p).unwrap();
    let e = one.get("m", "Q1").unwrap();
    assert_eq!((e.mean, e.count), (4.0, 1));

    let two = mos_aggregate_reader(Cursor::new(format!("{header}r1,s1,m,Q1,3\nr2,s1,m,Q1,5\n")), p).unwrap();
    assert_eq!(two.get("m", "Q1").unwrap().mean, 4.0);

    let rejected = mos_aggregate_reader(Cursor::new(format!("{header}r1,s1,m,Q1,6\nr2,s1,m,Q1,2\n")), p).unwrap();
    assert_eq!(rejected.errors, 1);
    assert_eq!(rejected.rejected[0].line, 2);
    let e = rejected.get("m", "Q1").unwrap();
    assert_eq!((e.mean, e.count), (2.0, 1));

    let methods = mos_aggregate_reader(
        Cursor::new(format!("{header}r1,s1,a,Q1,1\nr1,s1,b,Q1,5\nr1,s1,a,Q2,3\n")),
        p,
    )
    .unwrap();
    assert_eq!(methods.entries.len(), 3);
    assert_eq!(methods.get("b", "Q1").unwrap().mean, 5.0);

    for bad in [format!("{header}r1,s1,m,Q1,4\nr1,s1,m\n"), format!("{header}r1,s1,m,Q1,4\nr1,s1,m,Q1,four\n")] {
        match mos_aggregate_reader(Cursor::new(bad), p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}

fn quick_sampler() -> SamplerConfig {
    SamplerConfig {
        steps: 4,
        seed: 3,
        ..SamplerConfig::default()
    }
}

#[test]
fn evaluation_is_order_independent() {
    let model = EditModel::new(&small_model_config()).unwrap();
    let samples = eval_samples(&toy_triplets(4, 16));
    let texts = CategoryTexts::from_encoders(&model.encoders, samples.iter().map(|s| s.category.as_str())).unwrap();
    let a = evaluate_dataset(&model, &samples, &texts, &quick_sampler()).unwrap();
    let mut reversed = samples.clone();
    reversed.reverse();
    reversed.swap(0, 2);
    let b = evaluate_dataset(&model, &reversed, &texts, &quick_sampler()).unwrap();
    assert_eq!(a, b);
    assert!(a.is_valid());
    assert_eq!(a.n_samples, 4);
    for v in [a.avs, a.iis, a.tvs] {
        assert!((-1.0..=1.0).contains(&v));
    }
    assert!(evaluate_dataset(&model, &[], &texts, &quick_sampler()).is_err());
}

#[test]
fn unit_gain_sweep_is_a_plain_edit() {
    let model = EditModel::new(&small_model_config()).unwrap();
    let t = &toy_triplets(1, 16)[0];
    let report = volume_sweep(&model, &t.before, &t.audio, &[1.0], &quick_sampler()).unwrap();
    assert_eq!(report.images.len(), 1);
    assert_eq!(report.images[0], model.edit(&t.before, &t.audio, &quick_sampler()).unwrap());
    assert!(report.nondecreasing);
    assert!(volume_sweep(&model, &t.before, &t.audio, &[], &quick_sampler()).is_err());
    assert!(volume_sweep(&model, &t.before, &t.audio, &[2.0, 1.0], &quick_sampler()).is_err());
    assert!(volume_sweep(&model, &t.before, &t.audio, &[0.0, 1.0], &quick_sampler()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cosine_metrics_are_bounded_and_scale_invariant(
        a in prop::collection::vec(-2.0..2.0f64, 8),
        b in prop::collection::vec(-2.0..2.0f64, 8),
        s in 0.01..100.0f64,
        r in 0.01..100.0f64,
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let ea = EmbeddingVector::new(a.clone(), Space::JointAv).unwrap();
        let eb = EmbeddingVector::new(b.clone(), Space::JointAv).unwrap();
        let c = cosine(&ea, &eb).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        let sa = EmbeddingVector::new(a.iter().map(|v| v * s).collect(), Space::JointAv).unwrap();
        let sb = EmbeddingVector::new(b.iter().map(|v| v * r).collect(), Space::JointAv).unwrap();
        prop_assert!((cosine(&sa, &sb).unwrap() - c).abs() <= 1e-12);
    }

    #[test]
    fn image_metric_is_invariant_to_brightness_scaling(
        rgb in prop::array::uniform3(0.05..0.45f64), other in prop::array::uniform3(0.05..0.9f64), s in 0.2..2.0f64,
    ) {
        let base = iis(&MeanColour, &solid(rgb), &solid(other)).unwrap();
        let scaled = iis(&MeanColour, &solid(rgb.map(|v| v * s)), &solid(other)).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9);
    }
}
