use alloc::format;
use alloc::vec::Vec;

use super::config::{ImageShape, LatentSpec, ModelConfig};
use super::layers::{patchify_index, Ctx, Init, Linear, ResBlock};
use super::params::ParamStore;
use super::tape::Var;
use crate::rng::Rng;
use crate::Result;

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<ResBlock>,
    down: Option<Linear>,
    width: usize,
}

/// Patched convolutional residual encoder. The head emits `c` channels, or
/// `2c` (mean, log std) with a learned variance.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    image: ImageShape,
    latent: LatentSpec,
    patch: usize,
    stem: Linear,
    stages: Vec<Stage>,
    head: Linear,
    learned_variance: bool,
}

impl EncoderNet {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut Rng) -> Self {
        let e = &cfg.encoder;
        let c = cfg.image.channels;
        let stem = Linear::new(store, "encoder.stem", e.patch * e.patch * c, e.widths[0], Init::VarianceScaling(1.0), rng);
        let mut stages = Vec::new();
        for (s, (&width, &nb)) in e.widths.iter().zip(&e.blocks).enumerate() {
            let blocks = (0..nb).map(|b| ResBlock::new(store, &format!("encoder.s{s}.b{b}"), width, 0.0, rng)).collect();
            let down = e
                .widths
                .get(s + 1)
                .map(|&next| Linear::new(store, &format!("encoder.s{s}.down"), 4 * width, next, Init::VarianceScaling(1.0), rng));
            stages.push(Stage { blocks, down, width });
        }
        let last = *e.widths.last().expect("validated");
        let head = if e.learned_variance {
            // Mean channels from a variance-scaled map; log-std channels start at ln(sigma_0).
            let mut head = Linear::new(store, "encoder.head", last, 2 * cfg.latent.c, Init::VarianceScaling(1.0), rng);
            let sigma0 = crate::schedule::alpha_sigma_unchecked(cfg.latent.lambda_z0).sigma;
            head.set_log_std_init(store, cfg.latent.c, num_traits::Float::ln(sigma0));
            head
        } else {
            Linear::new(store, "encoder.head", last, cfg.latent.c, Init::VarianceScaling(1.0), rng)
        };
        Self {
            image: cfg.image,
            latent: cfg.latent,
            patch: e.patch,
            stem,
            stages,
            head,
            learned_variance: e.learned_variance,
        }
    }

    pub fn learned_variance(&self) -> bool {
        self.learned_variance
    }

    pub fn latent(&self) -> &LatentSpec {
        &self.latent
    }

    /// `x: [n, H, W, C]` to `[n, h, w, c]` (or `[n, h, w, 2c]`).
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let ImageShape { height, width, channels } = self.image;
        let n = ctx.tape.value(x).len() / self.image.numel();
        let p = self.patch;
        let (mut h, mut w) = (height / p, width / p);
        let a = ctx.tape.gather(x, patchify_index(n, height, width, channels, p), &[n, h, w, p * p * channels])?;
        let mut a = self.stem.forward(ctx, a)?;
        for stage in &self.stages {
            for block in &stage.blocks {
                a = block.forward(ctx, a, n, h, w)?;
            }
            if let Some(down) = &stage.down {
                a = ctx.tape.gather(a, patchify_index(n, h, w, stage.width, 2), &[n, h / 2, w / 2, 4 * stage.width])?;
                h /= 2;
                w /= 2;
                a = down.forward(ctx, a)?;
            }
        }
        let a = ctx.tape.silu(a);
        self.head.forward(ctx, a)
    }
}

impl Linear {
    /// Zero the weights feeding output channels `[c, 2c)` and set their bias.
    pub(crate) fn set_log_std_init(&mut self, store: &mut ParamStore, c: usize, bias: f64) {
        let (w, b) = self.ids();
        let dout = self.dout;
        let wt = store.get_mut(w).data_mut();
        for row in wt.chunks_mut(dout) {
            for v in &mut row[c..2 * c] {
                *v = 0.0;
            }
        }
        for v in &mut store.get_mut(b).data_mut()[c..2 * c] {
            *v = bias;
        }
    }
}
