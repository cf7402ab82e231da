//! Layer building blocks shared by the transformer towers and the denoiser.

use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::params::{Binding, ParamSet};
use crate::rng::normal_matrix;
use crate::tensor::Matrix;

pub const LN_EPS: f64 = 1e-5;

/// Low-rank adapter factors bound on a graph, with their `alpha / rank` scale.
#[derive(Clone, Copy, Debug)]
pub struct Adapter<'a> {
    pub binding: &'a Binding,
    pub scale: f64,
}

/// A view of bound parameters used to run named layers.
#[derive(Clone, Copy, Debug)]
pub struct Layers<'a> {
    params: &'a Binding,
    adapter: Option<Adapter<'a>>,
}

impl<'a> Layers<'a> {
    pub fn new(params: &'a Binding) -> Self {
        Self {
            params,
            adapter: None,
        }
    }

    pub fn with_adapter(params: &'a Binding, adapter: Option<Adapter<'a>>) -> Self {
        Self { params, adapter }
    }

    pub fn var(&self, name: &str) -> Var {
        self.params.var(name)
    }

    /// `x · W + b`, plus `scale · (x · Aᵀ) · Bᵀ` when an adapter targets `name`.
    pub fn linear(&self, g: &mut Graph, name: &str, x: Var) -> Var {
        let w = self.params.var(&format!("{name}.weight"));
        let mut y = g.matmul(x, w);
        if let Some(b) = self.params.try_var(&format!("{name}.bias")) {
            y = g.add_row(y, b);
        }
        if let Some(adapter) = self.adapter {
            if let (Some(a), Some(b)) = (
                adapter.binding.try_var(&format!("{name}.lora_a")),
                adapter.binding.try_var(&format!("{name}.lora_b")),
            ) {
                let at = g.transpose(a);
                let bt = g.transpose(b);
                let down = g.matmul(x, at);
                let up = g.matmul(down, bt);
                let delta = g.scale(up, adapter.scale);
                y = g.add(y, delta);
            }
        }
        y
    }

    pub fn layer_norm(&self, g: &mut Graph, name: &str, x: Var) -> Var {
        let n = g.layer_norm_rows(x, LN_EPS);
        let gain = self.params.var(&format!("{name}.gain"));
        let bias = self.params.var(&format!("{name}.bias"));
        let scaled = g.mul_row(n, gain);
        g.add_row(scaled, bias)
    }

    /// Multi-head attention of `queries` over `context` (self-attention when equal).
    pub fn attention(
        &self,
        g: &mut Graph,
        name: &str,
        queries: Var,
        context: Var,
        heads: usize,
    ) -> Var {
        let q = self.linear(g, &format!("{name}.to_q"), queries);
        let k = self.linear(g, &format!("{name}.to_k"), context);
        let v = self.linear(g, &format!("{name}.to_v"), context);
        let width = g.value(q).cols();
        assert_eq!(width % heads, 0, "attention width {width} not divisible by {heads} heads");
        let head_dim = width / heads;
        let inv_sqrt = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, lo, hi), g.slice_cols(k, lo, hi), g.slice_cols(v, lo, hi))
            };
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, inv_sqrt);
            let weights = g.softmax_rows(scores);
            outs.push(g.matmul(weights, vh));
        }
        let merged = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.linear(g, &format!("{name}.to_out"), merged)
    }

    /// Pre-norm transformer encoder layer: attention then GELU feed-forward.
    pub fn transformer_layer(&self, g: &mut Graph, name: &str, x: Var, heads: usize) -> Var {
        let h = self.layer_norm(g, &format!("{name}.norm1"), x);
        let a = self.attention(g, &format!("{name}.attn"), h, h, heads);
        let x = g.add(x, a);
        let h = self.layer_norm(g, &format!("{name}.norm2"), x);
        let h = self.linear(g, &format!("{name}.ff1"), h);
        let h = g.gelu(h);
        let h = self.linear(g, &format!("{name}.ff2"), h);
        g.add(x, h)
    }
}

/// Normal(0, gain²/d_in) weights; biases drawn with `bias_std` (zero for trainable nets).
pub fn init_linear(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_in: usize,
    d_out: usize,
    gain: f64,
    bias_std: Option<f64>,
) {
    let std = gain / (d_in as f64).sqrt();
    params.insert(format!("{name}.weight"), normal_matrix(rng, d_in, d_out, std));
    if let Some(bs) = bias_std {
        let bias = if bs > 0.0 {
            normal_matrix(rng, 1, d_out, bs)
        } else {
            Matrix::zeros(1, d_out)
        };
        params.insert(format!("{name}.bias"), bias);
    }
}

pub fn init_layer_norm(params: &mut ParamSet, name: &str, dim: usize) {
    params.insert(format!("{name}.gain"), Matrix::filled(1, dim, 1.0));
    params.insert(format!("{name}.bias"), Matrix::zeros(1, dim));
}

pub fn init_attention(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_query: usize,
    d_context: usize,
    width: usize,
    bias_std: Option<f64>,
) {
    init_linear(params, rng, &format!("{name}.to_q"), d_query, width, 1.0, None);
    init_linear(params, rng, &format!("{name}.to_k"), d_context, width, 1.0, None);
    init_linear(params, rng, &format!("{name}.to_v"), d_context, width, 1.0, None);
    init_linear(params, rng, &format!("{name}.to_out"), width, d_query, 1.0, bias_std);
}

pub fn init_transformer_layer(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    width: usize,
    ff_width: usize,
    bias_std: Option<f64>,
) {
    init_layer_norm(params, &format!("{name}.norm1"), width);
    init_attention(params, rng, &format!("{name}.attn"), width, width, width, bias_std);
    init_layer_norm(params, &format!("{name}.norm2"), width);
    init_linear(params, rng, &format!("{name}.ff1"), width, ff_width, 1.0, bias_std);
    init_linear(params, rng, &format!("{name}.ff2"), ff_width, width, 1.0, bias_std);
}

/// Sinusoidal encoding of an integer position into `dim` features
/// (interleaved sin/cos, base 10000).
pub fn sinusoidal(position: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            if i % 2 == 0 {
                (position * freq).sin()
            } else {
                (position * freq).cos()
            }
        })
        .collect()
}
