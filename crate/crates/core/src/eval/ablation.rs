use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::SamplerConfig;
use crate::error::Result;
use crate::pipeline::{EditModel, ModelConfig};
use crate::trainer::{ablation_matrix, run, AblationRow, PreparedSample, StopReason, TrainConfig};

use super::{evaluate_dataset, CategoryTexts, EvalSample, MetricsReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub row: AblationRow,
    pub metrics: MetricsReport,
    pub steps: u64,
    pub stop: StopReason,
    pub final_l_total: f64,
}

/// Trains each token-count / contrastive-loss row from scratch on `train` and
/// evaluates it on `eval`. Row outputs go to `out/<tag>` when given.
pub fn run_ablation(
    model: &ModelConfig,
    train: &TrainConfig,
    train_samples: &[EvalSample],
    eval_samples: &[EvalSample],
    sampler: &SamplerConfig,
    out: Option<&Path>,
) -> Result<Vec<AblationReport>> {
    let mut reports = Vec::new();
    for row in ablation_matrix() {
        let (m, t) = row.apply(model, train);
        let fresh = EditModel::new(&m)?;
        let prepared = train_samples
            .iter()
            .map(|s| PreparedSample::new(&fresh, &s.before, &s.after, &s.audio))
            .collect::<Result<Vec<_>>>()?;
        let dir = out.map(|o| o.join(&row.tag));
        let outcome = run(&m, &t, &prepared, None, dir.as_deref())?;
        let texts = CategoryTexts::from_encoders(
            &outcome.state.model.encoders,
            eval_samples.iter().map(|s| s.category.as_str()),
        )?;
        let mut metrics = evaluate_dataset(&outcome.state.model, eval_samples, &texts, sampler)?;
        metrics.tag = Some(row.tag.clone());
        let final_l_total = outcome
            .log
            .iter()
            .rev()
            .find(|r| r.losses.split == "train")
            .map_or(f64::NAN, |r| r.losses.l_total);
        reports.push(AblationReport {
            row,
            metrics,
            steps: outcome.state.step,
            stop: outcome.stop,
            final_l_total,
        });
    }
    Ok(reports)
}
