//! Reverse chains on a grid uniform in log-SNR: latents from the prior or
//! base model down to the encoding log-SNR, then images from the decoder
//! conditioned on those latents.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::model::Denoiser;
use crate::nn::{LatentModel, ModelBundle};
use crate::objective::noise_latent;
use crate::rng::{self, Rng};
use crate::schedule::alpha_sigma;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Gaussian posterior transitions `q(z_c | z_n, x = x̂)`.
    Ancestral,
    /// Deterministic transitions that keep the implied noise fixed.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub kind: SamplerKind,
    /// Multiplier on the ancestral transition standard deviation (1 is exact).
    pub noise_scale: f64,
    pub seed: u64,
    /// Return the final clean-latent prediction `ẑ` instead of the noisy `z_0`.
    pub return_prediction: bool,
    /// Samples processed together.
    pub chunk: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 128, kind: SamplerKind::Ancestral, noise_scale: 1.0, seed: 0, return_prediction: false, chunk: 64 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("sampler steps must be at least 1"));
        }
        if self.chunk == 0 {
            return Err(Error::config("sampler chunk must be positive"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config("noise_scale must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// End state of a chain: the sample at the clean end and the model's last
/// clean prediction (made at the last noisy grid point).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub state: Tensor,
    pub prediction: Tensor,
}

/// `steps + 1` log-SNR values from `lambda_min` to `lambda_max` inclusive.
pub fn lambda_grid(lambda_min: f64, lambda_max: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| if i == steps { lambda_max } else { lambda_min + (lambda_max - lambda_min) * i as f64 / steps as f64 })
        .collect()
}

/// One transition from log-SNR `ln` to the cleaner `lc` given the current
/// state `z` and clean prediction `x_hat`. `noise` is only read by the ancestral kind.
pub fn transition(z: &Tensor, x_hat: &Tensor, ln: f64, lc: f64, kind: SamplerKind, noise_scale: f64, noise: &Tensor) -> Result<Tensor> {
    z.ensure_same_shape(x_hat)?;
    if !(lc > ln) {
        return Err(Error::config("transitions must move to higher log-SNR"));
    }
    let (n, c) = (alpha_sigma(ln)?, alpha_sigma(lc)?);
    let out = match kind {
        SamplerKind::Ancestral => {
            noise.ensure_same_shape(z)?;
            // r = SNR_n / SNR_c; q(z_c | z_n, x) has mean r·(α_c/α_n)·z_n + α_c(1 - r)·x
            // and variance σ_c²(1 - r).
            let r = (ln - lc).exp();
            let a = r * c.alpha / n.alpha;
            let b = c.alpha * -(ln - lc).exp_m1();
            let s = noise_scale * c.sigma * (1.0 - r).max(0.0).sqrt();
            Tensor::from_fn(z.shape(), |i| a * z.data()[i] + b * x_hat.data()[i] + s * noise.data()[i])
        }
        SamplerKind::Deterministic => Tensor::from_fn(z.shape(), |i| {
            let eps = (z.data()[i] - n.alpha * x_hat.data()[i]) / n.sigma;
            c.alpha * x_hat.data()[i] + c.sigma * eps
        }),
    };
    Ok(out)
}

/// Run a chain from `N(0, I)` at `lambda_min` to `lambda_max` for `n` samples
/// of `sample_shape`. The model is only evaluated on grid points `< lambda_max`.
pub fn run_chain<D: Denoiser + ?Sized>(
    model: &D,
    lambda_min: f64,
    lambda_max: f64,
    sample_shape: &[usize],
    n: usize,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let mut shape = vec![n];
    shape.extend_from_slice(sample_shape);
    let numel: usize = shape.iter().product();
    let mut z = Tensor::new(&shape, rng::normals(rng, numel))?;
    let grid = lambda_grid(lambda_min, lambda_max, cfg.steps);
    let mut pred = Tensor::zeros(&shape);
    for w in grid.windows(2) {
        let (ln, lc) = (w[0], w[1]);
        pred = model.denoise(&z, &vec![ln; n])?;
        if !pred.all_finite() {
            return Err(Error::NonFinite("model prediction"));
        }
        let noise = match cfg.kind {
            SamplerKind::Ancestral => Tensor::new(&shape, rng::normals(rng, numel))?,
            SamplerKind::Deterministic => Tensor::zeros(&[0]),
        };
        z = transition(&z, &pred, ln, lc, cfg.kind, cfg.noise_scale, &noise)?;
    }
    Ok(ChainOutput { state: z, prediction: pred })
}

fn chunks(n: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n.div_ceil(size)).map(move |c| (c * size, size.min(n - c * size)))
}

fn check_bundle(bundle: &ModelBundle) -> Result<()> {
    if !bundle.all_finite() {
        return Err(Error::NonFinite("checkpoint parameters"));
    }
    Ok(())
}

/// `n` latents from the prior or base chain: the stochastic `z_0` at `λ_z(0)`,
/// or the final prediction `ẑ` with `return_prediction`.
pub fn sample_latent(bundle: &ModelBundle, which: LatentModel, n: usize, cfg: &SamplerConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_bundle(bundle)?;
    bundle.latent_net(which)?;
    let schedule = bundle.prior_schedule();
    let dims = bundle.config().latent.dims();
    let view = bundle.latent_view(which);
    let mut out = Vec::with_capacity(n * bundle.config().latent.numel());
    for (ci, (_, len)) in chunks(n, cfg.chunk).enumerate() {
        let mut rng = rng::stream(cfg.seed, "sampler.latent", ci as u64);
        let res = run_chain(&view, schedule.lambda_min(), schedule.lambda_max(), &dims, len, cfg, &mut rng)?;
        out.extend(if cfg.return_prediction { res.prediction } else { res.state }.into_data());
    }
    Tensor::new(&[n, dims[0], dims[1], dims[2]], out)
}

/// Decode latents `z0` (at `λ_z(0)`) into images; clamped to `[-1, 1]` at the end only.
pub fn decode(bundle: &ModelBundle, z0: &Tensor, cfg: &SamplerConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_bundle(bundle)?;
    let ld = bundle.config().latent.dims();
    let n = z0.batch();
    z0.ensure_shape(&[n, ld[0], ld[1], ld[2]])?;
    let schedule = bundle.decoder_schedule();
    let dims = bundle.config().image.dims();
    let mut out = Vec::with_capacity(n * bundle.config().image.numel());
    for (ci, (start, len)) in chunks(n, cfg.chunk).enumerate() {
        let zc = z0.select(&(start..start + len).collect::<Vec<_>>());
        let view = bundle.decoder_view(&zc);
        let mut rng = rng::stream(cfg.seed, "sampler.decode", ci as u64);
        let res = run_chain(&view, schedule.lambda_min(), schedule.lambda_max(), &dims, len, cfg, &mut rng)?;
        // the state at the clean end carries σ(λ_max) noise; emit α-rescaled state
        let a = alpha_sigma(schedule.lambda_max())?.alpha;
        out.extend(res.state.data().iter().map(|v| (v / a).clamp(-1.0, 1.0)));
    }
    Tensor::new(&[n, dims[0], dims[1], dims[2]], out)
}

/// Encode, add the fixed encoding noise, and decode.
pub fn reconstruct(bundle: &ModelBundle, x: &Tensor, cfg: &SamplerConfig) -> Result<Tensor> {
    cfg.validate()?;
    let z = bundle.encode(x)?;
    let noise = Tensor::new(z.shape(), rng::normals(&mut rng::rng_for(cfg.seed, "sampler.encode_noise"), z.len()))?;
    let z0 = noise_latent(&z, bundle.config().latent.lambda_z0, &noise)?;
    decode(bundle, &z0, cfg)
}

/// End-to-end samples: latents from `latent_bundle`, images from `decoder_bundle`.
pub fn generate(latent_bundle: &ModelBundle, which: LatentModel, decoder_bundle: &ModelBundle, n: usize, cfg: &SamplerConfig) -> Result<Tensor> {
    let (a, b) = (latent_bundle.config().latent, decoder_bundle.config().latent);
    if a.dims() != b.dims() || a.lambda_z0 != b.lambda_z0 {
        return Err(Error::config("latent and decoder bundles disagree on the latent spec"));
    }
    let d = decoder_bundle.config().image.dims();
    if n == 0 {
        return Ok(Tensor::zeros(&[0, d[0], d[1], d[2]]));
    }
    let z0 = sample_latent(latent_bundle, which, n, cfg)?;
    decode(decoder_bundle, &z0, cfg)
}
