use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mapping::check_same_layout;
use crate::nn::{init_attention, init_layer_norm, init_linear, sinusoidal, Layers};
use crate::params::ParamSet;
use crate::rng::stream;
use crate::tensor::Matrix;

use super::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub base_width: usize,
    pub latent_channels: usize,
    pub time_dim: usize,
    /// Init gain of the output convolution.
    pub out_gain: f64,
    /// Std of the latent prior the noise head is centered on.
    pub prior_std: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            base_width: 32,
            latent_channels: 4,
            time_dim: 32,
            out_gain: 0.3,
            prior_std: 0.03,
            seed: 5,
        }
    }
}

/// Names of the cross-attention blocks, outermost first.
pub const ATTENTION_BLOCKS: [&str; 5] = ["down1", "down2", "mid", "up2", "up1"];
pub const ATTENTION_PROJECTIONS: [&str; 4] = ["to_q", "to_k", "to_v", "to_out"];

/// Conditional U-net over image latents.
///
/// The first convolution sees the noisy latent concatenated with the
/// conditioning-image latent. Two resolution levels go down and come back up
/// with skip connections; every level has a residual block (timestep-aware)
/// followed by cross-attention over the condition embedding. The network
/// output `F` shifts a Gaussian prior centered on the conditioning latent, and
/// the noise estimate is that prior's posterior mean noise:
/// `eps = k_t (z_t - sqrt(ᾱ) (z_c + F))` with
/// `k_t = sqrt(1 - ᾱ) / (ᾱ σ_p² + 1 - ᾱ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    config: DenoiserConfig,
    d_cond: usize,
    params: ParamSet,
}

const FROZEN_BIAS_STD: f64 = 0.02;

fn init_res_block(
    p: &mut ParamSet,
    rng: &mut rand_chacha::ChaCha8Rng,
    name: &str,
    c_in: usize,
    c_out: usize,
    t_dim: usize,
) {
    init_layer_norm(p, &format!("{name}.norm1"), c_in);
    init_linear(p, rng, &format!("{name}.conv1"), 9 * c_in, c_out, 1.0, Some(FROZEN_BIAS_STD));
    init_linear(p, rng, &format!("{name}.time"), t_dim, c_out, 1.0, Some(FROZEN_BIAS_STD));
    init_layer_norm(p, &format!("{name}.norm2"), c_out);
    init_linear(p, rng, &format!("{name}.conv2"), 9 * c_out, c_out, 1.0, Some(FROZEN_BIAS_STD));
    if c_in != c_out {
        init_linear(p, rng, &format!("{name}.skip"), c_in, c_out, 1.0, None);
    }
}

fn init_cross_attention(
    p: &mut ParamSet,
    rng: &mut rand_chacha::ChaCha8Rng,
    name: &str,
    width: usize,
    d_cond: usize,
) {
    init_layer_norm(p, &format!("{name}.norm"), width);
    init_attention(p, rng, &format!("{name}.attn"), width, d_cond, width, Some(FROZEN_BIAS_STD));
}

impl Denoiser {
    pub fn new(config: &DenoiserConfig, d_cond: usize) -> Result<Self> {
        if config.base_width == 0 || config.latent_channels == 0 || config.time_dim == 0 {
            return Err(Error::config("denoiser.base_width", "widths must be positive"));
        }
        if !(config.prior_std > 0.0) {
            return Err(Error::config("denoiser.prior_std", "must be positive"));
        }
        let w = config.base_width;
        let c = config.latent_channels;
        let td = 2 * w;
        let mut rng = stream(config.seed, "denoiser.init");
        let mut p = ParamSet::new();
        init_linear(&mut p, &mut rng, "time.fc1", config.time_dim, td, 1.0, Some(FROZEN_BIAS_STD));
        init_linear(&mut p, &mut rng, "time.fc2", td, td, 1.0, Some(FROZEN_BIAS_STD));
        init_linear(&mut p, &mut rng, "conv_in", 9 * 2 * c, w, 1.0, Some(FROZEN_BIAS_STD));
        init_res_block(&mut p, &mut rng, "down1.res", w, w, td);
        init_cross_attention(&mut p, &mut rng, "down1.xattn", w, d_cond);
        init_res_block(&mut p, &mut rng, "down2.res", w, 2 * w, td);
        init_cross_attention(&mut p, &mut rng, "down2.xattn", 2 * w, d_cond);
        init_res_block(&mut p, &mut rng, "mid.res", 2 * w, 2 * w, td);
        init_cross_attention(&mut p, &mut rng, "mid.xattn", 2 * w, d_cond);
        init_res_block(&mut p, &mut rng, "up2.res", 4 * w, 2 * w, td);
        init_cross_attention(&mut p, &mut rng, "up2.xattn", 2 * w, d_cond);
        init_res_block(&mut p, &mut rng, "up1.res", 3 * w, w, td);
        init_cross_attention(&mut p, &mut rng, "up1.xattn", w, d_cond);
        init_layer_norm(&mut p, "out_norm", w);
        init_linear(&mut p, &mut rng, "conv_out", 9 * w, c, config.out_gain, Some(0.0));
        Ok(Self {
            config: config.clone(),
            d_cond,
            params: p,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn d_cond(&self) -> usize {
        self.d_cond
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        check_same_layout(&self.params, &params, "denoiser")?;
        self.params = params;
        Ok(())
    }

    /// Names of every linear layer (those with a `.weight`), each a valid
    /// adapter target.
    pub fn linear_layers(&self) -> Vec<String> {
        self.params
            .names()
            .filter_map(|n| n.strip_suffix(".weight").map(str::to_string))
            .collect()
    }

    /// `(d_in, d_out)` of a linear layer.
    pub fn layer_dims(&self, name: &str) -> Option<(usize, usize)> {
        self.params.get(&format!("{name}.weight")).map(Matrix::shape)
    }

    pub fn cross_attention_layers() -> Vec<String> {
        ATTENTION_BLOCKS
            .iter()
            .flat_map(|b| {
                ATTENTION_PROJECTIONS
                    .iter()
                    .map(move |p| format!("{b}.xattn.attn.{p}"))
            })
            .collect()
    }

    fn res_block(
        &self,
        g: &mut Graph,
        l: &Layers<'_>,
        name: &str,
        x: Var,
        temb: Var,
        h: usize,
        w: usize,
    ) -> Var {
        let a = l.layer_norm(g, &format!("{name}.norm1"), x);
        let a = g.silu(a);
        let a = g.im2col3x3(a, h, w);
        let a = l.linear(g, &format!("{name}.conv1"), a);
        let t = l.linear(g, &format!("{name}.time"), temb);
        let a = g.add_row(a, t);
        let a = l.layer_norm(g, &format!("{name}.norm2"), a);
        let a = g.silu(a);
        let a = g.im2col3x3(a, h, w);
        let a = l.linear(g, &format!("{name}.conv2"), a);
        let skip = if self.params.contains(&format!("{name}.skip.weight")) {
            l.linear(g, &format!("{name}.skip"), x)
        } else {
            x
        };
        g.add(skip, a)
    }

    fn cross_attention(&self, g: &mut Graph, l: &Layers<'_>, name: &str, x: Var, cond: Var) -> Var {
        let q = l.layer_norm(g, &format!("{name}.norm"), x);
        let a = l.attention(g, &format!("{name}.attn"), q, cond, 1);
        g.add(x, a)
    }

    /// Prior shift `F(z_t, t, z_c, c)` as a `[h·w, c_lat]` map.
    #[allow(clippy::too_many_arguments)]
    pub fn shift_graph(
        &self,
        g: &mut Graph,
        l: &Layers<'_>,
        z_t: Var,
        z_c: Var,
        t: usize,
        cond: Var,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        let c = self.config.latent_channels;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(format!("latent grid {h}x{w} must be divisible by 4")));
        }
        for (what, v) in [("noisy latent", z_t), ("image latent", z_c)] {
            if g.value(v).shape() != (h * w, c) {
                return Err(Error::shape(format!(
                    "{what} is {:?}, expected ({}, {c})",
                    g.value(v).shape(),
                    h * w
                )));
            }
        }
        if g.value(cond).cols() != self.d_cond {
            return Err(Error::shape(format!(
                "condition width {} differs from d_cond {}",
                g.value(cond).cols(),
                self.d_cond
            )));
        }
        let temb = g.constant(Matrix::row_vector(&sinusoidal(t as f64, self.config.time_dim)));
        let temb = l.linear(g, "time.fc1", temb);
        let temb = g.silu(temb);
        let temb = l.linear(g, "time.fc2", temb);
        let temb = g.silu(temb);

        let x = g.concat_cols(&[z_t, z_c]);
        let x = g.im2col3x3(x, h, w);
        let x = l.linear(g, "conv_in", x);
        let x = self.res_block(g, l, "down1.res", x, temb, h, w);
        let skip1 = self.cross_attention(g, l, "down1.xattn", x, cond);
        let (h2, w2) = (h / 2, w / 2);
        let x = g.avg_pool2(skip1, h, w);
        let x = self.res_block(g, l, "down2.res", x, temb, h2, w2);
        let skip2 = self.cross_attention(g, l, "down2.xattn", x, cond);
        let (h4, w4) = (h2 / 2, w2 / 2);
        let x = g.avg_pool2(skip2, h2, w2);
        let x = self.res_block(g, l, "mid.res", x, temb, h4, w4);
        let x = self.cross_attention(g, l, "mid.xattn", x, cond);
        let x = g.upsample2(x, h4, w4);
        let x = g.concat_cols(&[x, skip2]);
        let x = self.res_block(g, l, "up2.res", x, temb, h2, w2);
        let x = self.cross_attention(g, l, "up2.xattn", x, cond);
        let x = g.upsample2(x, h2, w2);
        let x = g.concat_cols(&[x, skip1]);
        let x = self.res_block(g, l, "up1.res", x, temb, h, w);
        let x = self.cross_attention(g, l, "up1.xattn", x, cond);
        let x = l.layer_norm(g, "out_norm", x);
        let x = g.silu(x);
        let x = g.im2col3x3(x, h, w);
        Ok(l.linear(g, "conv_out", x))
    }

    /// Noise estimate for DDPM-space `z_t` at step `t`.
    #[allow(clippy::too_many_arguments)]
    pub fn eps_graph(
        &self,
        g: &mut Graph,
        l: &Layers<'_>,
        schedule: &NoiseSchedule,
        z_t: Var,
        z_c: Var,
        t: usize,
        cond: Var,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        let ab = schedule.alpha_bar(t)?;
        let shift = self.shift_graph(g, l, z_t, z_c, t, cond, h, w)?;
        let mean = g.add(z_c, shift);
        let mean = g.scale(mean, ab.sqrt());
        let resid = g.sub(z_t, mean);
        let sp2 = self.config.prior_std * self.config.prior_std;
        let k = (1.0 - ab).sqrt() / (ab * sp2 + 1.0 - ab);
        Ok(g.scale(resid, k))
    }
}
