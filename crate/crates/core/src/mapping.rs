//! Audio-to-token mapping network.
//!
//! A clip-level audio embedding is projected to token width, prepended to a
//! block of learnable tokens, and the pair is refined by a small transformer.
//! The rows at the learnable positions become the pseudo-word sequence that
//! the condition encoder consumes.

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingVector, Space};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{init_layer_norm, init_linear, init_transformer_layer, Layers};
use crate::params::{Binding, ParamSet};
use crate::rng::{normal_matrix, stream};
use crate::tensor::Matrix;

/// `n_tokens × d_token` pseudo-word embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Matrix,
}

impl TokenSequence {
    pub fn new(tokens: Matrix) -> Result<Self> {
        if tokens.rows() == 0 || tokens.cols() == 0 || !tokens.is_finite() {
            return Err(Error::Numeric("token sequence must be non-empty and finite".into()));
        }
        Ok(Self { tokens })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.tokens
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn d_token(&self) -> usize {
        self.tokens.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    pub n_tokens: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub seed: u64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            n_tokens: 5,
            layers: 2,
            heads: 4,
            ff_mult: 4,
            seed: 11,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self, d_token: usize) -> Result<()> {
        if self.n_tokens < 1 {
            return Err(Error::config("mapping.n_tokens", "must be at least 1"));
        }
        if self.heads == 0 || d_token % self.heads != 0 {
            return Err(Error::config(
                "mapping.heads",
                format!("must divide d_token = {d_token}"),
            ));
        }
        if self.ff_mult == 0 {
            return Err(Error::config("mapping.ff_mult", "must be positive"));
        }
        Ok(())
    }
}

pub const TOKEN_INIT_STD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingNetwork {
    config: MappingConfig,
    d_a: usize,
    d_token: usize,
    params: ParamSet,
}

impl MappingNetwork {
    pub fn new(config: &MappingConfig, d_a: usize, d_token: usize) -> Result<Self> {
        config.validate(d_token)?;
        let mut rng = stream(config.seed, "mapping.init");
        let mut params = ParamSet::new();
        init_linear(&mut params, &mut rng, "audio_proj", d_a, d_token, 1.0, Some(0.0));
        params.insert(
            "tokens",
            normal_matrix(&mut rng, config.n_tokens, d_token, TOKEN_INIT_STD),
        );
        for l in 0..config.layers {
            init_transformer_layer(
                &mut params,
                &mut rng,
                &format!("layer{l}"),
                d_token,
                config.ff_mult * d_token,
                Some(0.0),
            );
        }
        init_layer_norm(&mut params, "final_norm", d_token);
        Ok(Self {
            config: config.clone(),
            d_a,
            d_token,
            params,
        })
    }

    pub fn config(&self) -> &MappingConfig {
        &self.config
    }

    pub fn d_a(&self) -> usize {
        self.d_a
    }

    pub fn d_token(&self) -> usize {
        self.d_token
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Replaces all parameters; names and shapes must match the current set.
    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        check_same_layout(&self.params, &params, "mapping_network")?;
        self.params = params;
        Ok(())
    }

    /// `[1, d_a]` audio row to `[n_tokens, d_token]` tokens on a graph.
    pub fn forward_graph(&self, g: &mut Graph, binding: &Binding, audio: Var) -> Result<Var> {
        let (r, c) = g.value(audio).shape();
        if r != 1 || c != self.d_a {
            return Err(Error::shape(format!(
                "mapping input is {r}x{c}, expected 1x{}",
                self.d_a
            )));
        }
        let layers = Layers::new(binding);
        let lifted = layers.linear(g, "audio_proj", audio);
        let mut x = g.concat_rows(&[lifted, binding.var("tokens")]);
        for l in 0..self.config.layers {
            x = layers.transformer_layer(g, &format!("layer{l}"), x, self.config.heads);
        }
        let x = layers.layer_norm(g, "final_norm", x);
        Ok(g.slice_rows(x, 1, 1 + self.config.n_tokens))
    }

    pub fn forward(&self, audio: &EmbeddingVector) -> Result<TokenSequence> {
        if audio.space() != Space::Audio {
            return Err(Error::SpaceMismatch {
                left: audio.space(),
                right: Space::Audio,
            });
        }
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, false);
        let a = g.constant(Matrix::row_vector(audio.values()));
        let out = self.forward_graph(&mut g, &binding, a)?;
        TokenSequence::new(g.value(out).clone())
    }
}

pub(crate) fn check_same_layout(current: &ParamSet, new: &ParamSet, what: &str) -> Result<()> {
    let same = current.len() == new.len()
        && current
            .iter()
            .all(|(k, v)| new.get(k).is_some_and(|n| n.shape() == v.shape()));
    if same {
        Ok(())
    } else {
        Err(Error::shape(format!("{what} parameter layout does not match")))
    }
}
