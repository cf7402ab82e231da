use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::pipeline::{EditModel, ModelConfig};
use crate::rng::stream;

use super::checkpoint::Checkpoint;
use super::{batch_loss, draw_noise, PreparedSample, TrainConfig, TrainState};

/// Loss scalars at a step, without timing (kept in checkpoints).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub split: String,
    pub l_ldm: f64,
    pub l_nce: f64,
    pub l_l1: f64,
    pub l_total: f64,
}

impl LossRecord {
    fn new(step: u64, split: &str, r: &LossReport) -> Self {
        Self {
            step,
            split: split.into(),
            l_ldm: r.l_ldm,
            l_nce: r.l_nce,
            l_l1: r.l_l1,
            l_total: r.l_total,
        }
    }
}

/// One training-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    #[serde(flatten)]
    pub losses: LossRecord,
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
}

pub struct RunOutcome {
    pub state: TrainState,
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
    pub stop: StopReason,
    pub best_val: Option<f64>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

const LOG_TAIL: usize = 20;

/// Deterministic held-out split: a seeded shuffle, the first
/// `round(n · fraction)` indices go to validation (none when `n < 2`).
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, "train.split"));
    let n_val = if n < 2 {
        0
    } else {
        ((n as f64 * fraction).round() as usize).min(n - 1)
    };
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val_sorted = val;
    val_sorted.sort_unstable();
    (train, val_sorted)
}

fn batch_for_step(train: &[usize], batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    if batch_size >= train.len() {
        return train.to_vec();
    }
    let mut rng = stream(seed ^ step.rotate_left(29), "train.batch");
    let mut pick = rand::seq::index::sample(&mut rng, train.len(), batch_size).into_vec();
    pick.sort_unstable();
    pick.into_iter().map(|i| train[i]).collect()
}

/// Mean loss over `indices` under fixed draws.
pub fn evaluate_loss(
    model: &EditModel,
    samples: &[PreparedSample],
    indices: &[usize],
    config: &TrainConfig,
    draw_seed: u64,
) -> Result<LossReport> {
    let refs: Vec<&PreparedSample> = indices.iter().map(|&i| &samples[i]).collect();
    let draws = draw_noise(model, &refs, draw_seed, 0, 0.0);
    batch_loss(model, &refs, &draws, config)
}

/// Trains from `start` (fresh when `None`) and, when `out` is given, writes the
/// JSONL log and periodic plus final checkpoints there.
pub fn run(
    model_config: &ModelConfig,
    config: &TrainConfig,
    samples: &[PreparedSample],
    start: Option<TrainState>,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::config("manifest", "no training samples"));
    }
    let side = samples[0].after_latent.height * crate::diffusion::FACTOR;
    if side != config.resolution {
        return Err(Error::config(
            "train.resolution",
            format!("samples are {side} px but the config says {}", config.resolution),
        ));
    }
    let mut state = match start {
        Some(s) => s,
        None => TrainState::new(EditModel::new(model_config)?, config.adam),
    };
    let (train_idx, val_idx) = split_indices(samples.len(), config.val_fraction, config.seed);
    let monitor = if val_idx.is_empty() { &train_idx } else { &val_idx };

    let mut log_file = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("train_log.jsonl"))?))
        }
        None => None,
    };
    let clock = Instant::now();
    let mut log = Vec::new();
    let mut push = |rec: LossRecord, log: &mut Vec<LogRecord>| -> Result<()> {
        let line = LogRecord {
            losses: rec,
            wall_time_s: clock.elapsed().as_secs_f64(),
        };
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &line)?;
            f.write_all(b"\n")?;
        }
        log.push(line);
        Ok(())
    };

    let mut best: Option<f64> = None;
    let mut evals = 0usize;
    let mut stale = 0usize;
    let mut stop = StopReason::Completed;
    while state.step < config.steps {
        let idx = batch_for_step(&train_idx, config.batch_size, config.seed, state.step);
        let batch: Vec<&PreparedSample> = idx.iter().map(|&i| &samples[i]).collect();
        let report = state.train_step(&batch, config)?;
        push(LossRecord::new(state.step, "train", &report), &mut log)?;

        if state.step % config.eval_every == 0 {
            let v = evaluate_loss(&state.model, samples, monitor, config, config.seed ^ 0x5A5A)?;
            push(LossRecord::new(state.step, "val", &v), &mut log)?;
            evals += 1;
            match best {
                Some(b) if v.l_total >= b => stale += 1,
                _ => {
                    best = Some(v.l_total);
                    stale = 0;
                }
            }
            if config.early_stop_patience > 0 && evals > config.warmup_evals && stale >= config.early_stop_patience {
                stop = StopReason::EarlyStopped;
                break;
            }
        }
        if let Some(dir) = out {
            if config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 {
                Checkpoint::capture(&state, config, tail(&log))
                    .save(&dir.join(format!("checkpoint_step{}.json", state.step)))?;
            }
        }
    }
    let checkpoint = Checkpoint::capture(&state, config, tail(&log));
    if let Some(dir) = out {
        checkpoint.save(&dir.join("checkpoint.json"))?;
    }
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    Ok(RunOutcome {
        state,
        checkpoint,
        log,
        stop,
        best_val: best,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

fn tail(log: &[LogRecord]) -> Vec<LossRecord> {
    log[log.len().saturating_sub(LOG_TAIL)..]
        .iter()
        .map(|r| r.losses.clone())
        .collect()
}

/// One row of the token-count / contrastive-loss ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub tag: String,
    pub n_tokens: usize,
    pub use_nce: bool,
}

/// Rows A–D: (1 token, NCE), (5, no NCE), (5, NCE), (10, NCE).
pub fn ablation_matrix() -> Vec<AblationRow> {
    [("A", 1, true), ("B", 5, false), ("C", 5, true), ("D", 10, true)]
        .into_iter()
        .map(|(tag, n_tokens, use_nce)| AblationRow {
            tag: tag.into(),
            n_tokens,
            use_nce,
        })
        .collect()
}

impl AblationRow {
    /// Configs for this row; the condition context grows to fit the tokens.
    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let mut m = model.clone();
        m.mapping.n_tokens = self.n_tokens;
        m.encoder.dims.n_ctx = m.encoder.dims.n_ctx.max(self.n_tokens);
        let mut t = train.clone();
        t.use_nce = self.use_nce;
        (m, t)
    }
}
