use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{init_layer_norm, init_linear, init_transformer_layer, sinusoidal, Layers};
use crate::params::ParamSet;
use crate::rng::{normal_matrix, stream};
use crate::tensor::Matrix;

use super::ConditionEncoder;

/// Gain of the token input projection.
pub const INPUT_GAIN: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TextTowerConfig {
    pub seed: u64,
    pub d_token: usize,
    pub d_cond: usize,
    pub d_joint: usize,
    pub n_ctx: usize,
    pub layers: usize,
    pub heads: usize,
    pub positional_encoding: bool,
}

/// Frozen seeded transformer standing in for a pretrained text tower.
///
/// Input tokens are lifted to `d_cond`, padded to `n_ctx` rows with a fixed
/// pad embedding, offset by sinusoidal positions and passed through pre-norm
/// layers and a final norm. The projection mean-pools the context rows and
/// maps them into the joint vision-language space.
///
/// Weights depend only on the seed and widths, never on `n_ctx`.
pub struct TextTower {
    config: TextTowerConfig,
    params: ParamSet,
}

impl TextTower {
    pub fn new(config: &TextTowerConfig) -> Self {
        let mut rng = stream(config.seed, "encoder.text");
        let mut params = ParamSet::new();
        let d = config.d_cond;
        init_linear(&mut params, &mut rng, "input", config.d_token, d, INPUT_GAIN, None);
        params.insert("pad", normal_matrix(&mut rng, 1, d, 0.5));
        for l in 0..config.layers {
            init_transformer_layer(&mut params, &mut rng, &format!("layer{l}"), d, 4 * d, Some(0.02));
        }
        init_layer_norm(&mut params, "final_norm", d);
        init_linear(&mut params, &mut rng, "proj", d, config.d_joint, 1.0, None);
        Self {
            config: config.clone(),
            params,
        }
    }

    pub fn config(&self) -> &TextTowerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    fn positions(&self) -> Matrix {
        let d = self.config.d_cond;
        let mut m = Matrix::zeros(self.config.n_ctx, d);
        if self.config.positional_encoding {
            for p in 0..self.config.n_ctx {
                m.row_mut(p).copy_from_slice(&sinusoidal(p as f64, d));
            }
        }
        m
    }
}

impl ConditionEncoder for TextTower {
    fn token_dim(&self) -> usize {
        self.config.d_token
    }

    fn cond_dim(&self) -> usize {
        self.config.d_cond
    }

    fn n_ctx(&self) -> usize {
        self.config.n_ctx
    }

    fn joint_dim(&self) -> usize {
        self.config.d_joint
    }

    fn encode_graph(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        let (n, d_tok) = g.value(tokens).shape();
        if d_tok != self.config.d_token {
            return Err(Error::shape(format!(
                "condition tokens have width {d_tok}, expected {}",
                self.config.d_token
            )));
        }
        if n == 0 || n > self.config.n_ctx {
            return Err(Error::config(
                "encoder.dims.n_ctx",
                format!("{n} tokens do not fit a context of {}", self.config.n_ctx),
            ));
        }
        let binding = self.params.bind(g, false);
        let layers = Layers::new(&binding);
        let lifted = layers.linear(g, "input", tokens);
        let mut x = if n < self.config.n_ctx {
            let pad = self.params.get("pad").expect("pad row");
            let mut rows = Matrix::zeros(self.config.n_ctx - n, self.config.d_cond);
            for r in 0..rows.rows() {
                rows.row_mut(r).copy_from_slice(pad.as_slice());
            }
            let pad = g.constant(rows);
            g.concat_rows(&[lifted, pad])
        } else {
            lifted
        };
        if self.config.positional_encoding {
            let pos = g.constant(self.positions());
            x = g.add(x, pos);
        }
        for l in 0..self.config.layers {
            x = layers.transformer_layer(g, &format!("layer{l}"), x, self.config.heads);
        }
        Ok(layers.layer_norm(g, "final_norm", x))
    }

    fn project_graph(&self, g: &mut Graph, cond: Var) -> Result<Var> {
        let (_, d) = g.value(cond).shape();
        if d != self.config.d_cond {
            return Err(Error::shape(format!(
                "condition embedding has width {d}, expected {}",
                self.config.d_cond
            )));
        }
        let w = g.constant(self.params.get("proj.weight").expect("projection").clone());
        let pooled = g.mean_rows(cond);
        Ok(g.matmul(pooled, w))
    }

    fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }
}
