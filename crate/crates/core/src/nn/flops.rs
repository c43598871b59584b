//! Static description of every dense map in a network, derived from its
//! configuration alone (no parameters are built).

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::config::{DenoiserConfig, LatentSpec, ModelConfig};
use super::layers::LambdaEmbedding;

/// A dense map applied independently at `tokens` positions of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearMap {
    pub tokens: usize,
    pub din: usize,
    pub dout: usize,
}

/// Self-attention over `tokens` positions of width `dim` (score and apply products).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub tokens: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub linears: Vec<LinearMap>,
    pub attention: Vec<AttentionMap>,
    /// Parameters outside any dense map (scalar gates).
    pub extra_params: usize,
}

impl NetworkSpec {
    pub fn param_count(&self) -> usize {
        self.linears.iter().map(|l| l.din * l.dout + l.dout).sum::<usize>() + self.extra_params
    }

    fn lin(&mut self, tokens: usize, din: usize, dout: usize) {
        self.linears.push(LinearMap { tokens, din, dout });
    }

    fn embedding(&mut self, dim: usize) {
        self.lin(1, 2 * LambdaEmbedding::DEFAULT_FREQS, dim);
        self.lin(1, dim, dim);
    }
}

pub fn encoder_spec(cfg: &ModelConfig) -> NetworkSpec {
    let e = &cfg.encoder;
    let mut s = NetworkSpec::default();
    let mut res = (cfg.image.height / e.patch) * (cfg.image.width / e.patch);
    s.lin(res, e.patch * e.patch * cfg.image.channels, e.widths[0]);
    for (i, (&w, &nb)) in e.widths.iter().zip(&e.blocks).enumerate() {
        for _ in 0..nb {
            s.lin(res, 9 * w, w);
            s.lin(res, 9 * w, w);
        }
        if let Some(&next) = e.widths.get(i + 1) {
            res /= 4;
            s.lin(res, 4 * w, next);
        }
    }
    let out = if e.learned_variance { 2 * cfg.latent.c } else { cfg.latent.c };
    s.lin(res, *e.widths.last().expect("validated"), out);
    s
}

/// Prior or base token mixer.
pub fn mixer_spec(cfg: &DenoiserConfig, latent: &LatentSpec) -> NetworkSpec {
    let t = latent.h * latent.w;
    let d = cfg.widths[0];
    let mut s = NetworkSpec { extra_params: 1, ..Default::default() };
    s.lin(t, latent.c, d);
    s.embedding(cfg.embed_dim);
    s.lin(1, cfg.embed_dim, d);
    for _ in 0..cfg.blocks[0] {
        s.lin(d, t, 2 * t);
        s.lin(d, 2 * t, t);
        s.lin(t, d, 2 * d);
        s.lin(t, 2 * d, d);
    }
    s.lin(t, d, latent.c);
    s
}

pub fn decoder_spec(cfg: &ModelConfig) -> NetworkSpec {
    let d = &cfg.decoder;
    let ws = &d.widths;
    let levels = ws.len();
    let mut s = NetworkSpec { extra_params: 1, ..Default::default() };
    let res0 = (cfg.image.height / d.patch) * (cfg.image.width / d.patch);
    let res = |i: usize| res0 >> (2 * i);
    let pc = d.patch * d.patch * cfg.image.channels;
    s.lin(res0, pc + cfg.latent.c, ws[0]);
    s.embedding(d.embed_dim);
    s.lin(1, d.embed_dim, ws[0]);
    s.lin(1, d.embed_dim, ws[levels - 1]);
    for i in 0..levels - 1 {
        for _ in 0..d.blocks[i] {
            s.lin(res(i), 9 * ws[i], ws[i]);
            s.lin(res(i), 9 * ws[i], ws[i]);
        }
        s.lin(res(i + 1), 4 * ws[i], ws[i + 1]);
    }
    let wl = ws[levels - 1];
    s.lin(res(levels - 1), wl + cfg.latent.c, wl);
    for _ in 0..d.blocks[levels - 1] {
        s.lin(res(levels - 1), 9 * wl, wl);
        s.lin(res(levels - 1), 9 * wl, wl);
    }
    for i in (0..levels - 1).rev() {
        s.lin(res(i + 1), ws[i + 1], 4 * ws[i]);
        s.lin(res(i), 2 * ws[i], ws[i]);
        for _ in 0..d.blocks[i] {
            s.lin(res(i), 9 * ws[i], ws[i]);
            s.lin(res(i), 9 * ws[i], ws[i]);
        }
    }
    s.lin(res0, ws[0], pc);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelBundle;

    #[test]
    fn spec_param_counts_match_built_networks() {
        let mut cfg = ModelConfig::default();
        for learned_variance in [false, true] {
            cfg.encoder.learned_variance = learned_variance;
            let b = ModelBundle::new(cfg.clone(), 3).unwrap();
            assert_eq!(encoder_spec(&cfg).param_count(), b.params.count("encoder."));
            assert_eq!(mixer_spec(&cfg.prior, &cfg.latent).param_count(), b.params.count("prior."));
            assert_eq!(mixer_spec(cfg.base.as_ref().unwrap(), &cfg.latent).param_count(), b.params.count("base."));
            assert_eq!(decoder_spec(&cfg).param_count(), b.params.count("decoder."));
        }
    }

    #[test]
    fn three_level_decoder_spec_matches() {
        let mut cfg = ModelConfig::default();
        cfg.image.height = 32;
        cfg.image.width = 32;
        cfg.encoder.widths = alloc::vec![8, 8, 16];
        cfg.encoder.blocks = alloc::vec![1, 0, 1];
        cfg.decoder.widths = alloc::vec![8, 8, 16];
        cfg.decoder.blocks = alloc::vec![1, 1, 2];
        let b = ModelBundle::new(cfg.clone(), 1).unwrap();
        assert_eq!(decoder_spec(&cfg).param_count(), b.params.count("decoder."));
        assert_eq!(encoder_spec(&cfg).param_count(), b.params.count("encoder."));
    }
}
