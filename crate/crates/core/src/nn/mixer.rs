use alloc::format;
use alloc::vec::Vec;

use super::config::{DenoiserConfig, LatentSpec};
use super::layers::{add_broadcast, transpose_index, Ctx, Init, Linear, LambdaEmbedding};
use super::params::{ParamId, ParamStore};
use super::tape::Var;
use crate::rng::Rng;
use crate::schedule::alpha_sigma_unchecked;
use crate::{Result, Tensor};

#[derive(Debug, Clone)]
struct MixerBlock {
    tok1: Linear,
    tok2: Linear,
    ch1: Linear,
    ch2: Linear,
}

/// MLP-mixer over latent positions (one token per spatial position), used for
/// the prior and the base model. Predicts the clean latent.
///
/// Output: `head(features) + gate · alpha(λ) · z_t`, with `head` and `gate`
/// zero-initialized so a fresh network predicts zero.
#[derive(Debug, Clone)]
pub struct MixerDenoiser {
    tokens: usize,
    width: usize,
    dropout: f64,
    input: Linear,
    embed: LambdaEmbedding,
    embed_proj: Linear,
    blocks: Vec<MixerBlock>,
    head: Linear,
    gate: ParamId,
}

impl MixerDenoiser {
    pub fn new(prefix: &str, cfg: &DenoiserConfig, latent: &LatentSpec, store: &mut ParamStore, rng: &mut Rng) -> Self {
        let tokens = latent.h * latent.w;
        let channels = latent.c;
        let d = cfg.widths[0];
        let th = 2 * tokens;
        let input = Linear::new(store, &format!("{prefix}.input"), channels, d, Init::VarianceScaling(1.0), rng);
        let embed = LambdaEmbedding::new(store, &format!("{prefix}.embed"), cfg.embed_dim, rng);
        let embed_proj = Linear::new(store, &format!("{prefix}.embed_proj"), cfg.embed_dim, d, Init::VarianceScaling(1.0), rng);
        let blocks = (0..cfg.blocks[0])
            .map(|b| MixerBlock {
                tok1: Linear::new(store, &format!("{prefix}.b{b}.tok1"), tokens, th, Init::VarianceScaling(1.0), rng),
                tok2: Linear::new(store, &format!("{prefix}.b{b}.tok2"), th, tokens, Init::VarianceScaling(0.5), rng),
                ch1: Linear::new(store, &format!("{prefix}.b{b}.ch1"), d, 2 * d, Init::VarianceScaling(1.0), rng),
                ch2: Linear::new(store, &format!("{prefix}.b{b}.ch2"), 2 * d, d, Init::VarianceScaling(0.5), rng),
            })
            .collect();
        let head = Linear::new(store, &format!("{prefix}.head"), d, channels, Init::Zero, rng);
        let gate = store.add(&format!("{prefix}.gate"), Tensor::full(&[1], 0.0));
        Self { tokens, width: d, dropout: cfg.dropout_rate, input, embed, embed_proj, blocks, head, gate }
    }

    /// `z_t: [n, h, w, c]`, one λ per batch entry.
    pub fn forward(&self, ctx: &mut Ctx<'_>, z_t: Var, lambda: &[f64]) -> Result<Var> {
        let (t, d) = (self.tokens, self.width);
        let n = lambda.len();
        let mut a = self.input.forward(ctx, z_t)?;
        let e = self.embed.forward(ctx, lambda)?;
        let e = ctx.tape.silu(e);
        let e = self.embed_proj.forward(ctx, e)?;
        a = add_broadcast(ctx.tape, a, e, n, t, d)?;
        for blk in &self.blocks {
            let u = ctx.tape.silu(a);
            let u = ctx.tape.gather(u, transpose_index(n, t, d), &[n, d, t])?;
            let u = blk.tok1.forward(ctx, u)?;
            let u = ctx.tape.silu(u);
            let u = ctx.dropout(u, self.dropout)?;
            let u = blk.tok2.forward(ctx, u)?;
            let u = ctx.tape.gather(u, transpose_index(n, d, t), &[n, t, d])?;
            a = ctx.tape.add(a, u)?;
            let v = ctx.tape.silu(a);
            let v = blk.ch1.forward(ctx, v)?;
            let v = ctx.tape.silu(v);
            let v = ctx.dropout(v, self.dropout)?;
            let v = blk.ch2.forward(ctx, v)?;
            a = ctx.tape.add(a, v)?;
        }
        let a = ctx.tape.silu(a);
        let out = self.head.forward(ctx, a)?;
        let alphas = lambda.iter().map(|&l| alpha_sigma_unchecked(l).alpha).collect();
        let skip = ctx.tape.scale_rows(z_t, alphas)?;
        let g = ctx.param(self.gate);
        let skip = ctx.tape.scale_by(skip, g)?;
        ctx.tape.add(out, skip)
    }
}
