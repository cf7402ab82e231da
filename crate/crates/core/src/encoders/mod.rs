//! Pluggable embedding providers.
//!
//! Four roles feed the editor: an audio encoder (clip-level audio feature), a
//! condition encoder that turns audio tokens into cross-attention context and
//! projects it into the joint vision-language space, an image embedder in that
//! same space, and a joint audio-visual embedder used for filtering and
//! evaluation. Each ships with a deterministic seeded toy backend.
//!
//! Encoders are frozen: nothing in the crate mutates them after construction.

mod text_tower;
mod toy_audio;
mod toy_image;
mod toy_joint;
mod toy_text;

use serde::{Deserialize, Serialize};

pub use text_tower::{TextTower, TextTowerConfig};
pub use toy_audio::ToyAudioEncoder;
pub use toy_image::ToyImageEncoder;
pub use toy_joint::ToyJointEmbedder;
pub use toy_text::ToyTextEmbedder;

use crate::audio::AudioClip;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mapping::TokenSequence;
use crate::raster::Image;
use crate::tensor::Matrix;
use crate::toyworld;

/// `n_ctx × d_cond` cross-attention context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionEmbedding {
    tokens: Matrix,
}

impl ConditionEmbedding {
    pub fn new(tokens: Matrix) -> Result<Self> {
        if tokens.rows() == 0 || !tokens.is_finite() {
            return Err(Error::Numeric("condition embedding must be non-empty and finite".into()));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn n_ctx(&self) -> usize {
        self.tokens.rows()
    }
}

pub trait AudioEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_audio(&self, clip: &AudioClip) -> Result<EmbeddingVector>;
    fn fingerprint(&self) -> String;
}

pub trait ImageEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_image(&self, img: &Image) -> Result<EmbeddingVector>;
    fn fingerprint(&self) -> String;
}

/// Text-tower role. Graph-level methods keep gradients flowing to the tokens.
pub trait ConditionEncoder: Send + Sync {
    fn token_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn n_ctx(&self) -> usize;
    fn joint_dim(&self) -> usize;
    /// `[n_tokens, d_token] -> [n_ctx, d_cond]`.
    fn encode_graph(&self, g: &mut Graph, tokens: Var) -> Result<Var>;
    /// `[n_ctx, d_cond] -> [1, d_joint]`.
    fn project_graph(&self, g: &mut Graph, cond: Var) -> Result<Var>;
    fn fingerprint(&self) -> String;

    fn encode_condition(&self, tokens: &TokenSequence) -> Result<ConditionEmbedding> {
        let mut g = Graph::new();
        let t = g.constant(tokens.matrix().clone());
        let out = self.encode_graph(&mut g, t)?;
        ConditionEmbedding::new(g.value(out).clone())
    }

    fn project_condition(&self, cond: &ConditionEmbedding) -> Result<EmbeddingVector> {
        let mut g = Graph::new();
        let c = g.constant(cond.tokens().clone());
        let out = self.project_graph(&mut g, c)?;
        EmbeddingVector::new(g.value(out).as_slice().to_vec(), crate::embedding::Space::JointVl)
    }
}

/// Prompt and label text into the joint vision-language space.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;
    fn fingerprint(&self) -> String;
}

pub enum JointInput<'a> {
    Audio(&'a AudioClip),
    Image(&'a Image),
}

pub trait JointEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_audio(&self, clip: &AudioClip) -> Result<EmbeddingVector>;
    fn embed_image(&self, img: &Image) -> Result<EmbeddingVector>;
    fn fingerprint(&self) -> String;

    fn joint_embed(&self, input: JointInput<'_>) -> Result<EmbeddingVector> {
        match input {
            JointInput::Audio(a) => self.embed_audio(a),
            JointInput::Image(i) => self.embed_image(i),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Toy,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderDims {
    pub d_a: usize,
    pub d_token: usize,
    pub d_cond: usize,
    pub d_joint: usize,
    pub d_av: usize,
    pub n_ctx: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            d_a: 16,
            d_token: 24,
            d_cond: 24,
            d_joint: 32,
            d_av: 32,
            n_ctx: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub backend: Backend,
    pub seed: u64,
    pub dims: EncoderDims,
    pub text_layers: usize,
    pub text_heads: usize,
    pub positional_encoding: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Toy,
            seed: 7,
            dims: EncoderDims::default(),
            text_layers: 2,
            text_heads: 4,
            positional_encoding: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        for (key, v) in [
            ("d_a", d.d_a),
            ("d_token", d.d_token),
            ("d_cond", d.d_cond),
            ("d_joint", d.d_joint),
            ("d_av", d.d_av),
            ("n_ctx", d.n_ctx),
        ] {
            if v == 0 {
                return Err(Error::config(format!("encoder.dims.{key}"), "must be positive"));
            }
        }
        if self.text_heads == 0 || d.d_cond % self.text_heads != 0 {
            return Err(Error::config(
                "encoder.text_heads",
                format!("must divide d_cond = {}", d.d_cond),
            ));
        }
        Ok(())
    }
}

/// The four frozen encoders used together by the editor.
pub struct EncoderSuite {
    pub audio: Box<dyn AudioEncoder>,
    pub image: Box<dyn ImageEncoder>,
    pub condition: Box<dyn ConditionEncoder>,
    pub joint: Box<dyn JointEmbedder>,
    pub text: Box<dyn TextEmbedder>,
}

impl EncoderSuite {
    pub fn from_config(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        match config.backend {
            Backend::Toy => {}
            Backend::External => {
                return Err(Error::config(
                    "encoder.backend",
                    "no external encoder backend is available in this build",
                ))
            }
        }
        let d = &config.dims;
        let tower = TextTower::new(&TextTowerConfig {
            seed: config.seed,
            d_token: d.d_token,
            d_cond: d.d_cond,
            d_joint: d.d_joint,
            n_ctx: d.n_ctx,
            layers: config.text_layers,
            heads: config.text_heads,
            positional_encoding: config.positional_encoding,
        });
        let image = ToyImageEncoder::new(config.seed, d.d_joint);
        let categories = toyworld::toy_categories();
        Ok(Self {
            audio: Box::new(ToyAudioEncoder::new(config.seed, d.d_a)),
            joint: Box::new(ToyJointEmbedder::new(
                config.seed,
                d.d_av,
                &categories,
            )?),
            text: Box::new(ToyTextEmbedder::new(ToyImageEncoder::new(config.seed, d.d_joint), categories)),
            image: Box::new(image),
            condition: Box::new(tower),
        })
    }

    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for part in [
            self.audio.fingerprint(),
            self.image.fingerprint(),
            self.condition.fingerprint(),
            self.joint.fingerprint(),
            self.text.fingerprint(),
        ] {
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }
}
