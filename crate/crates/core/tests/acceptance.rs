//! Acceptance criteria 1-9. Runs as a plain binary and prints one line per
//! criterion; exits non-zero when any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use sonedit::dataset::{
    build_dataset, filter_real, filter_synthetic, read_manifest, BuildConfig, Decision, FilterThresholds,
    ManifestRecord, RealAudioRule, RealMeasures, Rule, Subset, SyntheticMeasures,
};
use sonedit::diffusion::{
    sample, AdaptedDenoiser, Latent, NoisePredictor, SamplerConfig,
};
use sonedit::embedding::{cosine, EmbeddingVector, Space};
use sonedit::encoders::ConditionEmbedding;
use sonedit::eval::{fid, run_ablation, volume_sweep};
use sonedit::graph::{Graph, Var};
use sonedit::losses::{
    info_nce, info_nce_graph, l1_token_reg, l1_token_reg_graph, ldm_loss, ldm_loss_graph, L1Reduction,
};
use sonedit::media::save_png;
use sonedit::nn::{Adapter, Layers};
use sonedit::params::{Binding, ParamSet};
use sonedit::pipeline::{EditModel, ModelConfig};
use sonedit::rng::{normal_matrix, stream};
use sonedit::tensor::Matrix;
use sonedit::trainer::{
    batch_gradients, batch_loss, draw_noise, NoiseDraw, PreparedSample, StopReason, TrainConfig, TrainState,
};

use common::{eval_samples, prepare, rel_close, small_model_config, toy_triplets, Triplet};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn vl(v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::new(v.to_vec(), Space::JointVl).unwrap()
}

fn brute_nce(qv: &[Vec<f64>], qi: &[Vec<f64>]) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let n = qv.len();
    let mut total = 0.0;
    for j in 0..n {
        let num = cos(&qv[j], &qi[j]).exp();
        let den: f64 = (0..n).map(|k| cos(&qv[j], &qi[k]).exp()).sum();
        total += -(num / den).ln();
    }
    total / n as f64
}

fn criterion_1() -> Check {
    let mut rng = stream(11, "acceptance.c1");
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(2..=16);
        let qv: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let qi: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let oracle = brute_nce(&qv, &qi);
        let ev: Vec<_> = qv.iter().map(|v| vl(v)).collect();
        let ei: Vec<_> = qi.iter().map(|v| vl(v)).collect();
        let plain = info_nce(&ev, &ei, 1.0).map_err(err)?;
        let mut g = Graph::new();
        let a = g.constant(Matrix::from_vec(n, d, qv.concat()).unwrap());
        let b = g.constant(Matrix::from_vec(n, d, qi.concat()).unwrap());
        let out = info_nce_graph(&mut g, a, b, 1.0).map_err(err)?;
        let graph = g.value(out).item();
        worst = worst.max((plain - oracle).abs()).max((graph - oracle).abs());
    }
    ensure(worst <= 1e-9, || format!("info_nce differs from brute force by {worst:e}"))?;

    let q = [vl(&[1.0, 0.0]), vl(&[0.0, 1.0])];
    let v = info_nce(&q, &q, 1.0).map_err(err)?;
    let closed = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    ensure((v - closed).abs() <= 1e-6 && (v - 0.31326).abs() <= 1e-5, || {
        format!("orthogonal pair case gave {v}, expected {closed}")
    })?;

    let z = Matrix::zeros(2, 2);
    ensure(ldm_loss(&z, &z).map_err(err)? == 0.0, || "ldm of equal tensors is not 0".into())?;
    ensure(ldm_loss(&z, &Matrix::filled(2, 2, 1.0)).map_err(err)? == 1.0, || "ldm of ones is not 1".into())?;
    let p = Matrix::from_vec(1, 4, vec![0.5, -1.5, 2.0, 0.0]).unwrap();
    let t = Matrix::from_vec(1, 4, vec![0.0, 0.5, 1.0, 0.0]).unwrap();
    ensure(ldm_loss(&t, &p).map_err(err)? == (0.25 + 4.0 + 1.0) / 4.0, || "ldm hand value".into())?;
    let mut g = Graph::new();
    let (tv, pv) = (g.constant(t.clone()), g.constant(p.clone()));
    let lv = ldm_loss_graph(&mut g, tv, pv).map_err(err)?;
    ensure(g.value(lv).item() == 1.3125, || "graph ldm hand value".into())?;

    let m = Matrix::from_vec(2, 2, vec![1.0, -1.0, 2.0, 0.0]).unwrap();
    ensure(l1_token_reg(&Matrix::zeros(3, 4), L1Reduction::Sum) == 0.0, || "l1 of zeros".into())?;
    ensure(l1_token_reg(&m, L1Reduction::Sum) == 4.0, || "l1 hand value".into())?;
    let mut g = Graph::new();
    let mv = g.param(m);
    let l1 = l1_token_reg_graph(&mut g, mv, L1Reduction::Sum);
    ensure(g.value(l1).item() == 4.0, || "graph l1 hand value".into())?;
    let grads = g.backward(l1);
    ensure(grads.get(mv).unwrap().as_slice() == [1.0, -1.0, 1.0, 0.0], || "l1 subgradient at 0 is not 0".into())?;
    Ok(format!("200 random batches, max |Δ| = {worst:.1e}; 0.31326 case = {v:.6}"))
}

struct Parts {
    g: Graph,
    losses: [Var; 4],
    mapping: Binding,
    lora: Binding,
    tokens: Vec<Var>,
}

/// The training objective built step by step, with every component exposed.
/// `tokens` replaces the mapping network output with trainable leaves.
fn build_parts(
    model: &EditModel,
    batch: &[&PreparedSample],
    draws: &[NoiseDraw],
    config: &TrainConfig,
    tokens: Option<&[Matrix]>,
) -> Parts {
    let w = config.effective_weights();
    let mut g = Graph::new();
    let mapping = model.mapping.params().bind(&mut g, true);
    let lora = model.lora.params().bind(&mut g, true);
    let base = model.denoiser.params().bind(&mut g, false);
    let cond_enc = model.encoders.condition.as_ref();
    let (mut ldm, mut l1, mut proj, mut leaves) = (vec![], vec![], vec![], vec![]);
    {
        let layers = Layers::with_adapter(
            &base,
            Some(Adapter {
                binding: &lora,
                scale: model.lora.scale(),
            }),
        );
        for (i, (s, d)) in batch.iter().zip(draws).enumerate() {
            let v = match tokens {
                Some(t) => {
                    let leaf = g.param(t[i].clone());
                    leaves.push(leaf);
                    leaf
                }
                None => {
                    let f = g.constant(Matrix::row_vector(&s.audio_features));
                    model.mapping.forward_graph(&mut g, &mapping, f).unwrap()
                }
            };
            let c = cond_enc.encode_graph(&mut g, v).unwrap();
            proj.push(cond_enc.project_graph(&mut g, c).unwrap());
            l1.push(l1_token_reg_graph(&mut g, v, config.l1_reduction));
            let z_t = model.schedule.add_noise(&s.after_latent.values, &d.eps, d.t).unwrap();
            let z_t = g.constant(z_t);
            let z_c = g.constant(s.before_latent.values.clone());
            let eps_hat = model
                .denoiser
                .eps_graph(
                    &mut g,
                    &layers,
                    &model.schedule,
                    z_t,
                    z_c,
                    d.t,
                    c,
                    s.after_latent.height,
                    s.after_latent.width,
                )
                .unwrap();
            let eps = g.constant(d.eps.clone());
            ldm.push(ldm_loss_graph(&mut g, eps, eps_hat).unwrap());
        }
    }
    let all = g.concat_rows(&ldm);
    let l_ldm = g.mean(all);
    let all = g.concat_rows(&l1);
    let l_l1 = g.mean(all);
    let qv = g.concat_rows(&proj);
    let qi = Matrix::from_fn(batch.len(), batch[0].after_embedding.len(), |r, c| batch[r].after_embedding[c]);
    let qi = g.constant(qi);
    let l_nce = info_nce_graph(&mut g, qv, qi, config.temperature).unwrap();
    let a = g.scale(l_nce, w.lambda_nce);
    let b = g.scale(l_l1, w.lambda_l1);
    let total = g.add(l_ldm, a);
    let total = g.add(total, b);
    Parts {
        g,
        losses: [l_ldm, l_nce, l_l1, total],
        mapping,
        lora,
        tokens: leaves,
    }
}

fn part_values(
    model: &EditModel,
    batch: &[&PreparedSample],
    draws: &[NoiseDraw],
    config: &TrainConfig,
    tokens: Option<&[Matrix]>,
) -> [f64; 4] {
    let p = build_parts(model, batch, draws, config, tokens);
    p.losses.map(|v| p.g.value(v).item())
}

const LOSS_NAMES: [&str; 4] = ["L_LDM", "L_NCE", "l1", "L_total"];
const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_FLOOR: f64 = 1e-6;

fn pick_entries(params: &ParamSet, n: usize, rng: &mut impl Rng) -> Vec<(String, usize)> {
    let names: Vec<(String, usize)> = params.iter().map(|(k, m)| (k.clone(), m.len())).collect();
    (0..n)
        .map(|_| {
            let (name, len) = &names[rng.random_range(0..names.len())];
            (name.clone(), rng.random_range(0..*len))
        })
        .collect()
}

fn criterion_2() -> Check {
    let mut model = EditModel::new(&small_model_config()).map_err(err)?;
    let mut rng = stream(2, "acceptance.c2");
    for (_, m) in model.lora.params_mut().iter_mut() {
        for v in m.as_mut_slice() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let triplets = toy_triplets(3, 16);
    let samples = prepare(&model, &triplets);
    let batch: Vec<&PreparedSample> = samples.iter().collect();
    let config = TrainConfig {
        resolution: 16,
        ..TrainConfig::toy()
    };
    let draws = draw_noise(&model, &batch, 7, 0, 0.0);
    let mut checked = 0usize;
    let mut worst = 0.0f64;

    let mut compare = |what: &str, analytic: f64, numeric: f64| -> Result<(), String> {
        checked += 1;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max(rel);
        ensure(rel_close(analytic, numeric, GRAD_TOL, GRAD_FLOOR), || {
            format!("{what}: analytic {analytic:e} vs numeric {numeric:e}")
        })
    };

    // Production gradient of the total loss.
    let (report, grads) = batch_gradients(&model, &batch, &draws, &config).map_err(err)?;
    let direct = batch_loss(&model, &batch, &draws, &config).map_err(err)?;
    ensure(report == direct, || "batch_gradients and batch_loss disagree".into())?;
    let parts_total = part_values(&model, &batch, &draws, &config, None)[3];
    ensure((parts_total - report.l_total).abs() < 1e-12, || {
        format!("component graph total {parts_total} vs trainer {}", report.l_total)
    })?;

    // Mapping and LoRA parameters, each loss separately.
    let p = build_parts(&model, &batch, &draws, &config, None);
    let comp_grads: Vec<_> = p.losses.iter().map(|&l| p.g.backward(l)).collect();
    let mapping_grads: Vec<ParamSet> =
        comp_grads.iter().map(|g| p.mapping.gradients(g, model.mapping.params())).collect();
    let lora_grads: Vec<ParamSet> = comp_grads.iter().map(|g| p.lora.gradients(g, model.lora.params())).collect();
    drop(p);
    let entries = pick_entries(model.mapping.params(), 12, &mut rng);
    for (name, k) in &entries {
        let orig = model.mapping.params().get(name).unwrap().as_slice()[*k];
        model.mapping.params_mut().get_mut(name).unwrap().as_mut_slice()[*k] = orig + FD_STEP;
        let up = part_values(&model, &batch, &draws, &config, None);
        model.mapping.params_mut().get_mut(name).unwrap().as_mut_slice()[*k] = orig - FD_STEP;
        let down = part_values(&model, &batch, &draws, &config, None);
        model.mapping.params_mut().get_mut(name).unwrap().as_mut_slice()[*k] = orig;
        for c in 0..4 {
            let numeric = (up[c] - down[c]) / (2.0 * FD_STEP);
            compare(
                &format!("{} wrt mapping {name}[{k}]", LOSS_NAMES[c]),
                mapping_grads[c].get(name).unwrap().as_slice()[*k],
                numeric,
            )?;
        }
        compare(
            &format!("trainer L_total wrt mapping {name}[{k}]"),
            grads.mapping.get(name).unwrap().as_slice()[*k],
            (up[3] - down[3]) / (2.0 * FD_STEP),
        )?;
    }
    let entries = pick_entries(model.lora.params(), 12, &mut rng);
    for (name, k) in &entries {
        let orig = model.lora.params().get(name).unwrap().as_slice()[*k];
        model.lora.params_mut().get_mut(name).unwrap().as_mut_slice()[*k] = orig + FD_STEP;
        let up = part_values(&model, &batch, &draws, &config, None);
        model.lora.params_mut().get_mut(name).unwrap().as_mut_slice()[*k] = orig - FD_STEP;
        let down = part_values(&model, &batch, &draws, &config, None);
        model.lora.params_mut().get_mut(name).unwrap().as_mut_slice()[*k] = orig;
        for c in 0..4 {
            let numeric = (up[c] - down[c]) / (2.0 * FD_STEP);
            compare(
                &format!("{} wrt LoRA {name}[{k}]", LOSS_NAMES[c]),
                lora_grads[c].get(name).unwrap().as_slice()[*k],
                numeric,
            )?;
        }
        compare(
            &format!("trainer L_total wrt LoRA {name}[{k}]"),
            grads.lora.get(name).unwrap().as_slice()[*k],
            (up[3] - down[3]) / (2.0 * FD_STEP),
        )?;
    }

    // Audio tokens as leaves.
    let mut tokens: Vec<Matrix> = samples
        .iter()
        .map(|s| {
            let f = EmbeddingVector::new(s.audio_features.clone(), Space::Audio).unwrap();
            model.mapping.forward(&f).unwrap().matrix().clone()
        })
        .collect();
    let base = part_values(&model, &batch, &draws, &config, Some(&tokens));
    ensure((base[3] - report.l_total).abs() < 1e-12, || "token-leaf graph changes the loss".into())?;
    let p = build_parts(&model, &batch, &draws, &config, Some(&tokens));
    let token_grads: Vec<Vec<Matrix>> = p
        .losses
        .iter()
        .map(|&l| {
            let g = p.g.backward(l);
            p.tokens.iter().map(|&t| g.get(t).unwrap().clone()).collect()
        })
        .collect();
    drop(p);
    for _ in 0..12 {
        let i = rng.random_range(0..tokens.len());
        let k = rng.random_range(0..tokens[i].len());
        let orig = tokens[i].as_slice()[k];
        tokens[i].as_mut_slice()[k] = orig + FD_STEP;
        let up = part_values(&model, &batch, &draws, &config, Some(&tokens));
        tokens[i].as_mut_slice()[k] = orig - FD_STEP;
        let down = part_values(&model, &batch, &draws, &config, Some(&tokens));
        tokens[i].as_mut_slice()[k] = orig;
        for c in 0..4 {
            compare(
                &format!("{} wrt token {i}[{k}]", LOSS_NAMES[c]),
                token_grads[c][i].as_slice()[k],
                (up[c] - down[c]) / (2.0 * FD_STEP),
            )?;
        }
    }
    Ok(format!("{checked} gradient entries, worst relative error {worst:.1e}"))
}

fn lora_criterion_inputs(model: &EditModel, seed: u64) -> (Latent, Latent, ConditionEmbedding, usize) {
    let mut rng = stream(seed, "acceptance.c3");
    let t = rng.random_range(0..model.schedule.len());
    let z_t = Latent::new(4, 4, normal_matrix(&mut rng, 16, 4, 1.0)).unwrap();
    let z_c = Latent::new(4, 4, normal_matrix(&mut rng, 16, 4, 0.5)).unwrap();
    let n_ctx = model.config.encoder.dims.n_ctx;
    let cond = ConditionEmbedding::new(normal_matrix(&mut rng, n_ctx, model.denoiser.d_cond(), 1.0)).unwrap();
    (z_t, z_c, cond, t)
}

fn criterion_3() -> Check {
    let mut model = EditModel::new(&small_model_config()).map_err(err)?;
    let plain = AdaptedDenoiser {
        denoiser: &model.denoiser,
        lora: None,
        schedule: &model.schedule,
    };
    let adapted = model.predictor();
    for seed in 0..20 {
        let (z_t, z_c, cond, t) = lora_criterion_inputs(&model, seed);
        let a = plain.predict_eps(&z_t, t, &z_c, &cond).map_err(err)?;
        let b = adapted.predict_eps(&z_t, t, &z_c, &cond).map_err(err)?;
        ensure(a == b, || format!("zero-init adapter changed the prediction (seed {seed})"))?;
    }
    let triplets = toy_triplets(2, 16);
    let sampler = SamplerConfig {
        steps: 10,
        ..SamplerConfig::default()
    };
    for tr in &triplets {
        let cond = model.condition(&tr.audio).map_err(err)?;
        let null = model.null_condition().map_err(err)?;
        let z = model.autoencoder.encode(&tr.before).map_err(err)?;
        let a = sample(&plain, &model.schedule, &z, &cond, &null, &sampler).map_err(err)?;
        let b = sample(&adapted, &model.schedule, &z, &cond, &null, &sampler).map_err(err)?;
        ensure(a == b, || "zero-init adapter changed a sampled edit".into())?;
    }

    let mut rng = stream(3, "acceptance.c3.b");
    for (_, m) in model.lora.params_mut().iter_mut() {
        for v in m.as_mut_slice() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    let mut merged = model.denoiser.clone();
    merged.set_params(model.lora.merged(model.denoiser.params()).map_err(err)?).map_err(err)?;
    let merged_pred = AdaptedDenoiser {
        denoiser: &merged,
        lora: None,
        schedule: &model.schedule,
    };
    let mut worst = 0.0f64;
    let mut moved = 0.0f64;
    for seed in 0..20 {
        let (z_t, z_c, cond, t) = lora_criterion_inputs(&model, seed);
        let a = merged_pred.predict_eps(&z_t, t, &z_c, &cond).map_err(err)?;
        let b = model.predictor().predict_eps(&z_t, t, &z_c, &cond).map_err(err)?;
        let base = AdaptedDenoiser {
            denoiser: &model.denoiser,
            lora: None,
            schedule: &model.schedule,
        }
        .predict_eps(&z_t, t, &z_c, &cond)
        .map_err(err)?;
        worst = worst.max(a.max_abs_diff(&b));
        moved = moved.max(b.max_abs_diff(&base));
    }
    ensure(worst <= 1e-6, || format!("merged forward differs by {worst:e}"))?;
    ensure(moved > 0.0, || "perturbed adapter had no effect".into())?;

    let model = EditModel::new(&ModelConfig::default()).map_err(err)?;
    let frozen = model.frozen_fingerprint();
    let parts = (
        model.encoders.fingerprint(),
        model.autoencoder.fingerprint(),
        model.denoiser.params().fingerprint(),
    );
    let (m0, l0) = (model.mapping.params().clone(), model.lora.params().clone());
    let triplets = toy_triplets(8, 32);
    let samples = prepare(&model, &triplets);
    let batch: Vec<&PreparedSample> = samples.iter().collect();
    let config = TrainConfig {
        learning_rate: 3e-3,
        ..TrainConfig::toy()
    };
    let mut state = TrainState::new(model, config.adam);
    for _ in 0..50 {
        state.train_step(&batch, &config).map_err(err)?;
    }
    let m = &state.model;
    ensure(m.frozen_fingerprint() == frozen, || "frozen fingerprint changed".into())?;
    ensure(
        (
            m.encoders.fingerprint(),
            m.autoencoder.fingerprint(),
            m.denoiser.params().fingerprint(),
        ) == parts,
        || "a frozen module changed".into(),
    )?;
    ensure(m.mapping.params().max_abs_diff(&m0) > 0.0, || "mapping network did not train".into())?;
    ensure(m.lora.params().max_abs_diff(&l0) > 0.0, || "adapter did not train".into())?;
    Ok(format!("merge |Δ| = {worst:.1e}; fingerprints stable over 50 steps"))
}

struct ConstEps(f64);

impl NoisePredictor for ConstEps {
    fn predict_eps(
        &self,
        z_t: &Latent,
        _t: usize,
        _image: &Latent,
        _cond: &ConditionEmbedding,
    ) -> sonedit::Result<Matrix> {
        Ok(Matrix::filled(z_t.values.rows(), z_t.values.cols(), self.0))
    }
}

fn criterion_4() -> Check {
    let model = EditModel::new(&ModelConfig::default()).map_err(err)?;
    let tr = &toy_triplets(1, 32)[0];
    let sampler = SamplerConfig::default();
    let a = model.edit(&tr.before, &tr.audio, &sampler).map_err(err)?;
    let b = model.edit(&tr.before, &tr.audio, &sampler).map_err(err)?;
    ensure(a.max_abs_diff(&b) <= 1e-6, || "sampler is not seed-deterministic".into())?;
    let c = model
        .edit(&tr.before, &tr.audio, &SamplerConfig { seed: 1, ..sampler.clone() })
        .map_err(err)?;
    ensure(c.max_abs_diff(&a) > 0.0, || "sampler ignores its seed".into())?;

    // One step from sigma_max to 0: x = sigma_max n - sigma_max c.
    let cond = model.condition(&tr.audio).map_err(err)?;
    let null = model.null_condition().map_err(err)?;
    let z = model.autoencoder.encode(&tr.before).map_err(err)?;
    let ab = *model.schedule.alpha_bars().last().unwrap();
    let sigma_max = ((1.0 - ab) / ab).sqrt();
    let one = SamplerConfig {
        steps: 1,
        seed: 42,
        ..SamplerConfig::default()
    };
    let n = normal_matrix(&mut stream(42, "sampler.init"), z.values.rows(), z.values.cols(), 1.0);
    let mut worst = 0.0f64;
    for c in [0.0, 0.7, -1.3] {
        let out = sample(&ConstEps(c), &model.schedule, &z, &cond, &null, &one).map_err(err)?;
        let expect = n.map(|v| sigma_max * v - sigma_max * c);
        worst = worst.max(out.values.max_abs_diff(&expect) / sigma_max);
        if c == 0.0 {
            let decoded = model.autoencoder.decode(&out).map_err(err)?;
            let oracle = model
                .autoencoder
                .decode(&Latent::new(z.height, z.width, expect).unwrap())
                .map_err(err)?;
            ensure(decoded.max_abs_diff(&oracle) <= 1e-9, || "decoded one-step output".into())?;
        }
    }
    ensure(worst <= 1e-9, || format!("one-step update off by {worst:e} (relative to sigma)"))?;

    // Monte Carlo noising statistics.
    let mut rng = stream(4, "acceptance.c4");
    let z0 = normal_matrix(&mut rng, 16, 4, 1.0);
    let m0 = z0.mean();
    let var0 = z0.as_slice().iter().map(|v| (v - m0) * (v - m0)).sum::<f64>() / z0.len() as f64;
    let mut worst_rel = 0.0f64;
    for t in [0usize, 100, 500, 999] {
        let ab = model.schedule.alpha_bar(t).map_err(err)?;
        let draws = 10_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let eps = normal_matrix(&mut rng, 16, 4, 1.0);
            let zt = model.schedule.add_noise(&z0, &eps, t).map_err(err)?;
            for v in zt.as_slice() {
                s += v;
                s2 += v * v;
            }
        }
        let count = (draws * z0.len()) as f64;
        let mean = s / count;
        let var = s2 / count - mean * mean;
        let expect = ab * var0 + (1.0 - ab);
        worst_rel = worst_rel.max((var - expect).abs() / expect);
    }
    ensure(worst_rel <= 0.05, || format!("noising variance off by {:.2}%", 100.0 * worst_rel))?;
    Ok(format!("one-step |Δ|/σ = {worst:.1e}; variance within {:.2}%", 100.0 * worst_rel))
}

fn standardized(n: usize, mean: f64, var: f64, seed: u64) -> Matrix {
    let mut rng = stream(seed, "acceptance.c5");
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = raw.iter().sum::<f64>() / n as f64;
    let v = raw.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    let data = raw.iter().map(|x| mean + (x - m) / v.sqrt() * var.sqrt()).collect();
    Matrix::from_vec(n, 1, data).unwrap()
}

fn rotation(d: usize, seed: u64) -> Matrix {
    let mut rng = stream(seed, "acceptance.c5.rot");
    let mut q = Matrix::from_fn(d, d, |r, c| if r == c { 1.0 } else { 0.0 });
    for _ in 0..20 {
        let i = rng.random_range(0..d);
        let j = (i + rng.random_range(1..d)) % d;
        let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut g = Matrix::from_fn(d, d, |r, c| if r == c { 1.0 } else { 0.0 });
        g.set(i, i, th.cos());
        g.set(j, j, th.cos());
        g.set(i, j, -th.sin());
        g.set(j, i, th.sin());
        q = q.matmul(&g);
    }
    q
}

fn criterion_5() -> Check {
    let mut rng = stream(5, "acceptance.c5.sets");
    let a = normal_matrix(&mut rng, 64, 6, 1.0);
    let b = normal_matrix(&mut rng, 80, 6, 1.5).map(|v| v + 0.3);
    let self_d = fid(&a, &a).map_err(err)?;
    ensure(self_d.abs() <= 1e-6, || format!("self distance {self_d:e}"))?;
    let (ab, ba) = (fid(&a, &b).map_err(err)?, fid(&b, &a).map_err(err)?);
    ensure((ab - ba).abs() <= 1e-8, || format!("asymmetric: {ab} vs {ba}"))?;
    let x = standardized(50, 0.0, 1.0, 1);
    let y = standardized(70, 1.0, 4.0, 2);
    let d1 = fid(&x, &y).map_err(err)?;
    ensure((d1 - 2.0).abs() <= 1e-6, || format!("1-D case gave {d1}, expected 2"))?;
    let q = rotation(6, 9);
    let rot = fid(&a.matmul(&q), &b.matmul(&q)).map_err(err)?;
    ensure((rot - ab).abs() <= 1e-6, || format!("rotation changed FID by {:e}", (rot - ab).abs()))?;
    Ok(format!("self {self_d:.1e}; 1-D case {d1:.9}; rotation |Δ| {:.1e}", (rot - ab).abs()))
}

enum Case {
    Synthetic(f64, bool, f64, f64),
    Real(Option<(f64, f64, f64)>, RealAudioRule),
}

fn decision_table() -> Vec<(Case, Vec<Rule>)> {
    use Case::*;
    use RealAudioRule::{Absolute, Comparative};
    use Rule::*;
    vec![
        (Synthetic(0.25, false, 0.8, 0.3), vec![]),
        (Synthetic(0.15, false, 0.9, 0.9), vec![Directional]),
        (Synthetic(0.9, false, 0.65, 0.9), vec![Iis]),
        (Synthetic(0.9, false, 0.9, 0.1), vec![Avs]),
        (Synthetic(0.2, false, 0.7, 0.2), vec![]),
        (Synthetic(0.1999, false, 0.7, 0.2), vec![Directional]),
        (Synthetic(0.2, false, 0.6999, 0.2), vec![Iis]),
        (Synthetic(0.2, false, 0.7, 0.1999), vec![Avs]),
        (Synthetic(0.0, true, 0.95, 0.5), vec![Directional]),
        (Synthetic(0.5, true, 0.95, 0.5), vec![Directional]),
        (Synthetic(-0.5, false, 0.2, -0.3), vec![Directional, Iis, Avs]),
        (Synthetic(0.1, false, 0.5, 0.5), vec![Directional, Iis]),
        (Synthetic(0.1, false, 0.9, 0.0), vec![Directional, Avs]),
        (Synthetic(0.3, false, 0.5, 0.1), vec![Iis, Avs]),
        (Synthetic(1.0, false, 1.0, 1.0), vec![]),
        (Synthetic(f64::NAN, false, 0.9, 0.9), vec![Directional]),
        (Synthetic(0.3, false, -1.0, 0.3), vec![Iis]),
        (Synthetic(0.21, false, 0.71, 0.21), vec![]),
        (Real(None, Comparative), vec![NoSourceLocalized]),
        (Real(Some((0.5, 0.4, 0.1)), Comparative), vec![]),
        (Real(Some((0.75, 0.4, 0.1)), Comparative), vec![Iis]),
        (Real(Some((0.7, 0.4, 0.1)), Comparative), vec![]),
        (Real(Some((0.5, 0.3, 0.3)), Comparative), vec![ResidualObject]),
        (Real(Some((0.5, 0.3, 0.35)), Comparative), vec![ResidualObject]),
        (Real(Some((0.9, 0.3, 0.5)), Comparative), vec![Iis, ResidualObject]),
        (Real(Some((1.0, 0.2, 0.2)), Comparative), vec![Iis, ResidualObject]),
        (Real(Some((0.5, 0.1, 0.15)), Absolute), vec![]),
        (Real(Some((0.5, 0.9, 0.25)), Absolute), vec![ResidualObject]),
        (Real(Some((0.8, 0.9, 0.2)), Absolute), vec![Iis]),
        (Real(None, Absolute), vec![NoSourceLocalized]),
    ]
}

/// Independent restatement of the rules over recorded manifest values.
fn brute_force_rules(r: &ManifestRecord, t: &FilterThresholds) -> Vec<Rule> {
    let mut out = vec![];
    match r.subset {
        Subset::Synthetic => {
            let (d, i, a) = (r.dir_sim.unwrap(), r.iis.unwrap(), r.avs.unwrap());
            if r.provenance.directional_degenerate || d < t.directional_min || d.is_nan() {
                out.push(Rule::Directional);
            }
            if i < t.iis_min || i.is_nan() {
                out.push(Rule::Iis);
            }
            if a < t.avs_min || a.is_nan() {
                out.push(Rule::Avs);
            }
        }
        Subset::Real => {
            if r.provenance.mask.is_none_or(|m| m.pixels == 0) {
                return vec![Rule::NoSourceLocalized];
            }
            if r.iis.unwrap() > t.real_iis_discard_above {
                out.push(Rule::Iis);
            }
            if r.provenance.avs_inpainted.unwrap() >= r.avs.unwrap() {
                out.push(Rule::ResidualObject);
            }
        }
    }
    out
}

fn criterion_6() -> Check {
    let table = decision_table();
    for (i, (case, expect)) in table.iter().enumerate() {
        let decision = match *case {
            Case::Synthetic(dir_sim, degenerate, iis, avs) => filter_synthetic(
                &SyntheticMeasures {
                    dir_sim,
                    degenerate,
                    iis,
                    avs,
                },
                &FilterThresholds::default(),
            ),
            Case::Real(m, rule) => {
                let t = FilterThresholds {
                    real_audio_rule: rule,
                    ..FilterThresholds::default()
                };
                let m = m.map(|(iis, avs_original, avs_inpainted)| RealMeasures {
                    iis,
                    avs_original,
                    avs_inpainted,
                });
                filter_real(m.as_ref(), &t)
            }
        };
        let got: Vec<Rule> = decision.reasons.iter().map(|r| r.rule).collect();
        ensure(&got == expect && decision.keep == expect.is_empty(), || {
            format!("table row {i}: expected {expect:?}, got {got:?} (keep {})", decision.keep)
        })?;
    }

    let dir = tempfile::tempdir().map_err(err)?;
    let model = EditModel::new(&ModelConfig::default()).map_err(err)?;
    let t = FilterThresholds::default();
    let mut records = vec![];
    for (subset, name) in [(Subset::Synthetic, "synthetic.jsonl"), (Subset::Real, "real.jsonl")] {
        let cfg = BuildConfig {
            subset,
            n_sources: 1,
            real_per_category: 3,
            ..BuildConfig::default()
        };
        let path = dir.path().join(name);
        build_dataset(&cfg, &t, &model.encoders, &path).map_err(err)?;
        records.extend(read_manifest(&path).map_err(err)?);
    }
    let mut kept = 0;
    for r in &records {
        let expect = brute_force_rules(r, &t);
        let recorded: Vec<Rule> = r.reasons.iter().map(|x| x.rule).collect();
        let keep = r.decision == Decision::Keep;
        ensure(recorded == expect && keep == expect.is_empty(), || {
            format!("{}: recorded {recorded:?}, brute force {expect:?}", r.after_path)
        })?;
        let again = r.reevaluate(&t).map_err(err)?;
        ensure(again.keep == keep && again.reasons == r.reasons, || {
            format!("{}: re-evaluation differs", r.after_path)
        })?;
        kept += keep as usize;
    }
    Ok(format!("{} table rows; {} manifest records ({kept} kept) re-derived", table.len(), records.len()))
}

fn criterion_7() -> Check {
    let model = EditModel::new(&ModelConfig::default()).map_err(err)?;
    let triplets = toy_triplets(8, 32);
    let samples = prepare(&model, &triplets);
    let batch: Vec<&PreparedSample> = samples.iter().collect();
    let config = TrainConfig {
        steps: 500,
        learning_rate: 3e-3,
        ..TrainConfig::toy()
    };
    let measure = |m: &EditModel| -> Result<f64, String> {
        let mut total = 0.0;
        for k in 0..8 {
            let draws = draw_noise(m, &batch, 999, k, 0.0);
            total += batch_loss(m, &batch, &draws, &config).map_err(err)?.l_total / 8.0;
        }
        Ok(total)
    };
    let before = measure(&model)?;
    let mut state = TrainState::new(model, config.adam);
    for _ in 0..config.steps {
        state.train_step(&batch, &config).map_err(err)?;
    }
    let after = measure(&state.model)?;
    let ratio = after / before;
    let enc = state.model.encoders.image.as_ref();
    let mut wins = 0;
    for (j, tr) in triplets.iter().enumerate() {
        let sampler = SamplerConfig {
            seed: j as u64,
            ..SamplerConfig::default()
        };
        let edited = state.model.edit(&tr.before, &tr.audio, &sampler).map_err(err)?;
        let target = enc.encode_image(&tr.after).map_err(err)?;
        let e = cosine(&enc.encode_image(&edited).map_err(err)?, &target).map_err(err)?;
        let b = cosine(&enc.encode_image(&tr.before).map_err(err)?, &target).map_err(err)?;
        wins += (e > b) as usize;
    }
    let summary = format!("l_total {before:.4} -> {after:.4} (ratio {ratio:.3}); IIS improved on {wins}/8");
    ensure(ratio <= 0.5 && wins >= 6, || summary.clone())?;
    Ok(summary)
}

fn criterion_8() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let triplets: Vec<Triplet> = toy_triplets(8, 32);
    let samples = eval_samples(&triplets);
    let train = TrainConfig {
        steps: 500,
        learning_rate: 3e-3,
        eval_every: 50,
        checkpoint_every: 250,
        ..TrainConfig::toy()
    };
    let reports = run_ablation(
        &ModelConfig::default(),
        &train,
        &samples,
        &samples,
        &SamplerConfig::default(),
        Some(dir.path()),
    )
    .map_err(err)?;
    let tags: Vec<&str> = reports.iter().map(|r| r.row.tag.as_str()).collect();
    ensure(tags == ["A", "B", "C", "D"], || format!("row tags {tags:?}"))?;
    let mut lines = vec![];
    for r in &reports {
        let m = &r.metrics;
        ensure(m.tag.as_deref() == Some(r.row.tag.as_str()), || format!("row {} report untagged", r.row.tag))?;
        ensure(m.is_valid() && m.n_samples == 8, || format!("row {} metrics {m:?}", r.row.tag))?;
        ensure(dir.path().join(&r.row.tag).join("checkpoint.json").is_file(), || {
            format!("row {} wrote no checkpoint", r.row.tag)
        })?;
        ensure(r.stop == StopReason::Completed || r.stop == StopReason::EarlyStopped, || "stop".into())?;
        lines.push(format!(
            "{}(n={},nce={}) avs {:.3} iis {:.3} tvs {:.3} fid {:.4}",
            r.row.tag, r.row.n_tokens, r.row.use_nce, m.avs, m.iis, m.tvs, m.fid
        ));
    }
    Ok(lines.join("; "))
}

fn criterion_9() -> Check {
    let model = EditModel::new(&ModelConfig::default()).map_err(err)?;
    let tr = &toy_triplets(1, 32)[0];
    let gains = [0.5, 1.0, 2.0];
    let sampler = SamplerConfig {
        seed: 9,
        ..SamplerConfig::default()
    };
    let first = volume_sweep(&model, &tr.before, &tr.audio, &gains, &sampler).map_err(err)?;
    let second = volume_sweep(&model, &tr.before, &tr.audio, &gains, &sampler).map_err(err)?;
    let mut min_diff = f64::INFINITY;
    for i in 0..gains.len() {
        for j in i + 1..gains.len() {
            min_diff = min_diff.min(first.images[i].max_abs_diff(&first.images[j]));
        }
    }
    ensure(min_diff > 0.0, || "two gains produced identical edits".into())?;
    let dir = tempfile::tempdir().map_err(err)?;
    for (i, (a, b)) in first.images.iter().zip(&second.images).enumerate() {
        let (pa, pb) = (dir.path().join(format!("a{i}.png")), dir.path().join(format!("b{i}.png")));
        save_png(a, &pa).map_err(err)?;
        save_png(b, &pb).map_err(err)?;
        ensure(std::fs::read(&pa).map_err(err)? == std::fs::read(&pb).map_err(err)?, || {
            format!("gain {} PNG bytes differ between runs", gains[i])
        })?;
    }
    let (ja, jb) = (serde_json::to_string(&first).map_err(err)?, serde_json::to_string(&second).map_err(err)?);
    ensure(ja == jb, || "sweep reports differ between runs".into())?;
    Ok(format!("min pairwise max |Δ| = {min_diff:.2e}; AVS trace {:?}", first.avs))
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 9] = [
        ("loss oracles", criterion_1, Duration::from_secs(5)),
        ("gradients", criterion_2, Duration::from_secs(60)),
        ("LoRA", criterion_3, Duration::from_secs(30)),
        ("sampler", criterion_4, Duration::from_secs(60)),
        ("FID", criterion_5, Duration::from_secs(10)),
        ("filters", criterion_6, Duration::from_secs(5)),
        ("toy overfit", criterion_7, Duration::from_secs(600)),
        ("ablation matrix", criterion_8, Duration::from_secs(1800)),
        ("volume sweep", criterion_9, Duration::from_secs(120)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|x| *x == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *limit => Err(format!("{detail}; took longer than {limit:?}")),
            other => other,
        };
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {id} ({name}): {status} [{:.1}s] {detail}", elapsed.as_secs_f64());
        failed += outcome.is_err() as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
