//! Building blocks: dense maps, 3×3 convolutions as gathered dense maps,
//! the λ embedding, and the index maps used to move data between layouts.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var, PAD};
use crate::rng::{self, Rng};
use crate::{Result, Tensor};

/// Forward-pass context: the tape, the parameter values to read, and the
/// dropout generator (present only in training mode).
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub dropout: Option<&'a mut Rng>,
}

impl<'a> Ctx<'a> {
    pub fn eval(tape: &'a mut Tape, store: &'a ParamStore) -> Self {
        Self { tape, store, dropout: None }
    }

    pub fn train(tape: &'a mut Tape, store: &'a ParamStore, dropout: &'a mut Rng) -> Self {
        Self { tape, store, dropout: Some(dropout) }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    /// Inverted dropout; identity in evaluation mode or for `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.dropout.as_deref_mut() else { return Ok(x) };
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let n = self.tape.value(x).len();
        let mask = (0..n).map(|_| if rng::uniform(rng) < keep { 1.0 / keep } else { 0.0 }).collect();
        self.tape.mul_const(x, mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Weights `N(0, scale / fan_in)`, zero bias.
    VarianceScaling(f64),
    /// All zeros.
    Zero,
    /// Zero weights, constant bias.
    Bias(f64),
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, init: Init, rng: &mut Rng) -> Self {
        let w = match init {
            Init::VarianceScaling(scale) => {
                let std = (scale / din as f64).sqrt();
                Tensor::new(&[din, dout], rng::normals(rng, din * dout).into_iter().map(|v| v * std).collect())
                    .expect("sized")
            }
            Init::Zero | Init::Bias(_) => Tensor::zeros(&[din, dout]),
        };
        let b = match init {
            Init::Bias(v) => Tensor::full(&[dout], v),
            _ => Tensor::zeros(&[dout]),
        };
        let w = store.add(&format!("{name}.w"), w);
        let b = store.add(&format!("{name}.b"), b);
        Self { w, b, din, dout }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.w);
        let b = ctx.param(self.b);
        ctx.tape.linear(x, w, Some(b))
    }

    pub fn param_count(&self) -> usize {
        self.din * self.dout + self.dout
    }

    pub(crate) fn ids(&self) -> (ParamId, ParamId) {
        (self.w, self.b)
    }
}

/// Same-padded 3×3 convolution over `[n, h, w, c]`.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    lin: Linear,
}

impl Conv3x3 {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, init: Init, rng: &mut Rng) -> Self {
        Self { lin: Linear::new(store, name, 9 * cin, cout, init, rng) }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, n: usize, h: usize, w: usize) -> Result<Var> {
        let c = self.lin.din / 9;
        let cols = ctx.tape.gather(x, im2col3x3_index(n, h, w, c), &[n, h, w, 9 * c])?;
        self.lin.forward(ctx, cols)
    }
}

/// `x + conv(silu(conv(silu(x))))` at constant width.
#[derive(Debug, Clone)]
pub struct ResBlock {
    c1: Conv3x3,
    c2: Conv3x3,
    dropout: f64,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, dropout: f64, rng: &mut Rng) -> Self {
        Self {
            c1: Conv3x3::new(store, &format!("{name}.conv1"), width, width, Init::VarianceScaling(1.0), rng),
            c2: Conv3x3::new(store, &format!("{name}.conv2"), width, width, Init::VarianceScaling(0.5), rng),
            dropout,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, n: usize, h: usize, w: usize) -> Result<Var> {
        let a = ctx.tape.silu(x);
        let a = self.c1.forward(ctx, a, n, h, w)?;
        let a = ctx.tape.silu(a);
        let a = ctx.dropout(a, self.dropout)?;
        let a = self.c2.forward(ctx, a, n, h, w)?;
        ctx.tape.add(x, a)
    }
}

/// Sinusoidal features of λ followed by a two-layer projection.
#[derive(Debug, Clone)]
pub struct LambdaEmbedding {
    freqs: Vec<f64>,
    l1: Linear,
    l2: Linear,
}

impl LambdaEmbedding {
    pub const DEFAULT_FREQS: usize = 8;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut Rng) -> Self {
        let k = Self::DEFAULT_FREQS;
        let (lo, hi) = (0.05f64.ln(), 2.0f64.ln());
        let freqs = (0..k).map(|i| (lo + (hi - lo) * i as f64 / (k - 1) as f64).exp()).collect();
        Self {
            freqs,
            l1: Linear::new(store, &format!("{name}.l1"), 2 * k, dim, Init::VarianceScaling(1.0), rng),
            l2: Linear::new(store, &format!("{name}.l2"), dim, dim, Init::VarianceScaling(1.0), rng),
        }
    }

    pub fn features(&self, lambda: &[f64]) -> Tensor {
        let k = self.freqs.len();
        let mut data = Vec::with_capacity(lambda.len() * 2 * k);
        for &l in lambda {
            data.extend(self.freqs.iter().map(|f| (f * l).sin()));
            data.extend(self.freqs.iter().map(|f| (f * l).cos()));
        }
        Tensor::new(&[lambda.len(), 2 * k], data).expect("sized")
    }

    /// `[n] -> [n, dim]`
    pub fn forward(&self, ctx: &mut Ctx<'_>, lambda: &[f64]) -> Result<Var> {
        let f = ctx.tape.leaf(&self.features(lambda));
        let h = self.l1.forward(ctx, f)?;
        let h = ctx.tape.silu(h);
        self.l2.forward(ctx, h)
    }

    pub fn dim(&self) -> usize {
        self.l2.dout
    }

    pub fn input_dim(&self) -> usize {
        self.l1.din
    }
}

/// `[n, h, w, c] -> [n, h/p, w/p, p·p·c]`
pub fn patchify_index(n: usize, h: usize, w: usize, c: usize, p: usize) -> Vec<u32> {
    let (ho, wo) = (h / p, w / p);
    let mut idx = Vec::with_capacity(n * h * w * c);
    for b in 0..n {
        for i in 0..ho {
            for j in 0..wo {
                for di in 0..p {
                    for dj in 0..p {
                        let base = ((b * h + i * p + di) * w + j * p + dj) * c;
                        idx.extend((0..c).map(|ch| (base + ch) as u32));
                    }
                }
            }
        }
    }
    idx
}

/// Inverse of [`patchify_index`]: `[n, h, w, p·p·c] -> [n, h·p, w·p, c]`.
pub fn unpatchify_index(n: usize, h: usize, w: usize, c: usize, p: usize) -> Vec<u32> {
    let (ho, wo) = (h * p, w * p);
    let mut idx = Vec::with_capacity(n * ho * wo * c);
    for b in 0..n {
        for y in 0..ho {
            for x in 0..wo {
                let (i, di, j, dj) = (y / p, y % p, x / p, x % p);
                let base = ((b * h + i) * w + j) * p * p * c + (di * p + dj) * c;
                idx.extend((0..c).map(|ch| (base + ch) as u32));
            }
        }
    }
    idx
}

/// `[n, h, w, c] -> [n, h, w, 9c]` neighbourhoods with zero padding.
pub fn im2col3x3_index(n: usize, h: usize, w: usize, c: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(n * h * w * 9 * c);
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                for di in 0..3 {
                    for dj in 0..3 {
                        let (y, x) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                            idx.extend(core::iter::repeat(PAD).take(c));
                        } else {
                            let base = ((b * h + y as usize) * w + x as usize) * c;
                            idx.extend((0..c).map(|ch| (base + ch) as u32));
                        }
                    }
                }
            }
        }
    }
    idx
}

/// `[n, t, d] -> [n, d, t]`
pub fn transpose_index(n: usize, t: usize, d: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(n * t * d);
    for b in 0..n {
        for k in 0..d {
            idx.extend((0..t).map(|i| ((b * t + i) * d + k) as u32));
        }
    }
    idx
}

/// `[n, d] -> [n, t, d]`
pub fn broadcast_index(n: usize, t: usize, d: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(n * t * d);
    for b in 0..n {
        for _ in 0..t {
            idx.extend((0..d).map(|k| (b * d + k) as u32));
        }
    }
    idx
}

/// Nearest-neighbour upsampling `[n, h, w, c] -> [n, h·f, w·f, c]`.
pub fn upsample_index(n: usize, h: usize, w: usize, c: usize, f: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(n * h * w * c * f * f);
    for b in 0..n {
        for y in 0..h * f {
            for x in 0..w * f {
                let base = ((b * h + y / f) * w + x / f) * c;
                idx.extend((0..c).map(|ch| (base + ch) as u32));
            }
        }
    }
    idx
}

/// Channels `[from, from + len)` of a `[.., c]` tensor.
pub fn channel_slice_index(rows: usize, c: usize, from: usize, len: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(rows * len);
    for r in 0..rows {
        idx.extend((from..from + len).map(|k| (r * c + k) as u32));
    }
    idx
}

/// Add a per-sample vector `[n, d]` to every position of `[n, t, d]`.
pub fn add_broadcast(tape: &mut Tape, x: Var, e: Var, n: usize, t: usize, d: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let eb = tape.gather(e, broadcast_index(n, t, d), &shape)?;
    tape.add(x, eb)
}
