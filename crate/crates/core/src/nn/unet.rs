use alloc::format;
use alloc::vec::Vec;

use super::config::{ImageShape, LatentSpec, ModelConfig};
use super::layers::{add_broadcast, patchify_index, unpatchify_index, upsample_index, Ctx, Init, Linear, LambdaEmbedding, ResBlock};
use super::params::{ParamId, ParamStore};
use super::tape::Var;
use crate::rng::Rng;
use crate::schedule::alpha_sigma_unchecked;
use crate::{Result, Tensor};

#[derive(Debug, Clone)]
struct Down {
    blocks: Vec<ResBlock>,
    down: Linear,
}

#[derive(Debug, Clone)]
struct Up {
    up: Linear,
    merge: Linear,
    blocks: Vec<ResBlock>,
}

/// U-shaped convolutional decoder denoiser. The latent `z0` is upsampled
/// (nearest neighbour) and concatenated both at the input resolution and at
/// the bottleneck.
#[derive(Debug, Clone)]
pub struct UNetDecoder {
    image: ImageShape,
    latent: LatentSpec,
    patch: usize,
    widths: Vec<usize>,
    stem: Linear,
    embed: LambdaEmbedding,
    embed_in: Linear,
    embed_mid: Linear,
    downs: Vec<Down>,
    mid_in: Linear,
    mid: Vec<ResBlock>,
    ups: Vec<Up>,
    head: Linear,
    gate: ParamId,
}

impl UNetDecoder {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut Rng) -> Self {
        let d = &cfg.decoder;
        let p = d.patch;
        let ch = cfg.image.channels;
        let ws = &d.widths;
        let levels = ws.len();
        let vs = Init::VarianceScaling(1.0);
        let stem = Linear::new(store, "decoder.stem", p * p * ch + cfg.latent.c, ws[0], vs, rng);
        let embed = LambdaEmbedding::new(store, "decoder.embed", d.embed_dim, rng);
        let embed_in = Linear::new(store, "decoder.embed_in", d.embed_dim, ws[0], vs, rng);
        let embed_mid = Linear::new(store, "decoder.embed_mid", d.embed_dim, ws[levels - 1], vs, rng);
        let downs = (0..levels - 1)
            .map(|i| Down {
                blocks: (0..d.blocks[i])
                    .map(|b| ResBlock::new(store, &format!("decoder.down{i}.b{b}"), ws[i], d.dropout_rate, rng))
                    .collect(),
                down: Linear::new(store, &format!("decoder.down{i}.down"), 4 * ws[i], ws[i + 1], vs, rng),
            })
            .collect();
        let wl = ws[levels - 1];
        let mid_in = Linear::new(store, "decoder.mid.in", wl + cfg.latent.c, wl, vs, rng);
        let mid = (0..d.blocks[levels - 1])
            .map(|b| ResBlock::new(store, &format!("decoder.mid.b{b}"), wl, d.dropout_rate, rng))
            .collect();
        let ups = (0..levels - 1)
            .rev()
            .map(|i| Up {
                up: Linear::new(store, &format!("decoder.up{i}.up"), ws[i + 1], 4 * ws[i], vs, rng),
                merge: Linear::new(store, &format!("decoder.up{i}.merge"), 2 * ws[i], ws[i], vs, rng),
                blocks: (0..d.blocks[i])
                    .map(|b| ResBlock::new(store, &format!("decoder.up{i}.b{b}"), ws[i], d.dropout_rate, rng))
                    .collect(),
            })
            .collect();
        let head = Linear::new(store, "decoder.head", ws[0], p * p * ch, Init::Zero, rng);
        let gate = store.add("decoder.gate", Tensor::full(&[1], 1.0));
        Self {
            image: cfg.image,
            latent: cfg.latent,
            patch: p,
            widths: ws.clone(),
            stem,
            embed,
            embed_in,
            embed_mid,
            downs,
            mid_in,
            mid,
            ups,
            head,
            gate,
        }
    }

    /// `x_t: [n, H, W, C]`, `z0: [n, h, w, c]`, one λ per batch entry.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x_t: Var, z0: Var, lambda: &[f64]) -> Result<Var> {
        let ImageShape { height, width, channels } = self.image;
        let n = lambda.len();
        let p = self.patch;
        let (mut h, mut w) = (height / p, width / p);
        let ws = &self.widths;

        let e = self.embed.forward(ctx, lambda)?;
        let e = ctx.tape.silu(e);
        let e_in = self.embed_in.forward(ctx, e)?;
        let e_mid = self.embed_mid.forward(ctx, e)?;

        let LatentSpec { h: lh, w: lw, c: lc, .. } = self.latent;
        let a = ctx.tape.gather(x_t, patchify_index(n, height, width, channels, p), &[n, h, w, p * p * channels])?;
        let z_in = ctx.tape.gather(z0, upsample_index(n, lh, lw, lc, h / lh), &[n, h, w, lc])?;
        let a = ctx.tape.concat(a, z_in)?;
        let mut a = self.stem.forward(ctx, a)?;
        a = add_broadcast(ctx.tape, a, e_in, n, h * w, ws[0])?;

        let mut skips = Vec::with_capacity(self.downs.len());
        for (i, lvl) in self.downs.iter().enumerate() {
            for b in &lvl.blocks {
                a = b.forward(ctx, a, n, h, w)?;
            }
            skips.push((a, h, w));
            a = ctx.tape.gather(a, patchify_index(n, h, w, ws[i], 2), &[n, h / 2, w / 2, 4 * ws[i]])?;
            h /= 2;
            w /= 2;
            a = lvl.down.forward(ctx, a)?;
        }

        let f = h / lh;
        let z = if f == 1 { z0 } else { ctx.tape.gather(z0, upsample_index(n, lh, lw, lc, f), &[n, h, w, lc])? };
        a = ctx.tape.concat(a, z)?;
        a = self.mid_in.forward(ctx, a)?;
        let wl = *ws.last().expect("validated");
        a = add_broadcast(ctx.tape, a, e_mid, n, h * w, wl)?;
        for b in &self.mid {
            a = b.forward(ctx, a, n, h, w)?;
        }

        for (up, (skip, sh, sw)) in self.ups.iter().zip(skips.into_iter().rev()) {
            let wi = up.merge.dout;
            let u = ctx.tape.silu(a);
            let u = up.up.forward(ctx, u)?;
            a = ctx.tape.gather(u, unpatchify_index(n, h, w, wi, 2), &[n, sh, sw, wi])?;
            h = sh;
            w = sw;
            a = ctx.tape.concat(a, skip)?;
            a = up.merge.forward(ctx, a)?;
            for b in &up.blocks {
                a = b.forward(ctx, a, n, h, w)?;
            }
        }

        let a = ctx.tape.silu(a);
        let out = self.head.forward(ctx, a)?;
        let out = ctx.tape.gather(out, unpatchify_index(n, h, w, channels, p), &[n, height, width, channels])?;
        let alphas = lambda.iter().map(|&l| alpha_sigma_unchecked(l).alpha).collect();
        let skip = ctx.tape.scale_rows(x_t, alphas)?;
        let g = ctx.param(self.gate);
        let skip = ctx.tape.scale_by(skip, g)?;
        ctx.tape.add(out, skip)
    }
}
