//! Latent bitrate, reconstruction and sample-quality metrics, and FLOP counts.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{blob_mode, ImageDataset};
use crate::linalg;
use crate::model::Denoiser;
use crate::nn::flops::{decoder_spec, encoder_spec, mixer_spec, NetworkSpec};
use crate::nn::layers::{Ctx, Init, Linear};
use crate::nn::{ImageShape, LatentModel, ModelBundle, ModelConfig, ParamStore, Tape};
use crate::objective::endpoint_kl_prior;
use crate::optim::{Adam, OptimConfig};
use crate::rng;
use crate::schedule::{forward_diffuse_rows, NoiseSchedule};
use crate::{Error, Result, Tensor};

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Self { mean, std_error, n }
    }
}

/// Latent information per sample, from the prior ELBO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitrateReport {
    pub nats_total: f64,
    pub bits_per_dim: f64,
    pub bits_per_pixel: f64,
    /// Standard error of `nats_total`.
    pub std_error: f64,
    pub n_mc: usize,
    pub latent_dims: usize,
    pub image_pixels: usize,
    /// Set when the model had not been trained.
    pub flagged: bool,
}

impl BitrateReport {
    pub fn from_estimate(est: Estimate, latent_dims: usize, image_pixels: usize, flagged: bool) -> Self {
        let ln2 = core::f64::consts::LN_2;
        Self {
            nats_total: est.mean,
            bits_per_dim: est.mean / (latent_dims as f64 * ln2),
            bits_per_pixel: est.mean / (image_pixels as f64 * ln2),
            std_error: est.std_error,
            n_mc: est.n,
            latent_dims,
            image_pixels,
            flagged,
        }
    }

    pub fn se_bits_per_dim(&self) -> f64 {
        self.std_error / (self.latent_dims as f64 * core::f64::consts::LN_2)
    }

    pub fn se_bits_per_pixel(&self) -> f64 {
        self.std_error / (self.image_pixels as f64 * core::f64::consts::LN_2)
    }
}

const CHUNK: usize = 512;

/// Monte-Carlo prior ELBO over `n_mc` draws of `(z, t, ε)`, cycling through
/// the rows of `z_clean`; times are stratified within each chunk of draws.
pub fn elbo_estimate<D: Denoiser + ?Sized>(model: &D, schedule: &NoiseSchedule, z_clean: &Tensor, n_mc: usize, seed: u64) -> Result<Estimate> {
    if n_mc == 0 {
        return Err(Error::config("n_mc must be at least 1"));
    }
    if z_clean.batch() == 0 {
        return Err(Error::config("no latents to evaluate"));
    }
    let mut rng = rng::rng_for(seed, "bitrate");
    let m = z_clean.sample_len();
    let mut terms = Vec::with_capacity(n_mc);
    let mut j = 0;
    while j < n_mc {
        let n = CHUNK.min(n_mc - j);
        let rows: Vec<usize> = (j..j + n).map(|k| k % z_clean.batch()).collect();
        let z = z_clean.select(&rows);
        let t = rng::stratified_times(&mut rng, n);
        let eps = Tensor::new(z.shape(), rng::normals(&mut rng, n * m))?;
        let lambda = t.iter().map(|&t| schedule.logsnr(t)).collect::<Result<Vec<_>>>()?;
        let z_t = forward_diffuse_rows(&z, &lambda, &eps)?;
        let z_hat = model.denoise(&z_t, &lambda)?;
        let sq = z.row_sq_dist(&z_hat)?;
        let kl = endpoint_kl_prior(&z, schedule);
        for i in 0..n {
            terms.push(schedule.elbo_weight_x(t[i])? * sq[i] + kl[i]);
        }
        j += n;
    }
    let est = Estimate::from_samples(&terms);
    if !est.mean.is_finite() {
        return Err(Error::NonFinite("bitrate estimate"));
    }
    Ok(est)
}

/// Encode `indices` of a dataset with the evaluation encoder.
pub fn encode_dataset<D: ImageDataset + ?Sized>(bundle: &ModelBundle, data: &D, indices: &[usize]) -> Result<Tensor> {
    let d = bundle.config().latent.dims();
    let mut out = Vec::with_capacity(indices.len() * bundle.config().latent.numel());
    for chunk in indices.chunks(64) {
        out.extend(bundle.encode(&data.batch(chunk)?)?.into_data());
    }
    Tensor::new(&[indices.len(), d[0], d[1], d[2]], out)
}

/// Latent bitrate of `bundle` on `indices` of a dataset, measured with the
/// prior or the base model.
pub fn estimate_bitrate<D: ImageDataset + ?Sized>(
    bundle: &ModelBundle,
    which: LatentModel,
    data: &D,
    indices: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<BitrateReport> {
    let z = encode_dataset(bundle, data, indices)?;
    let est = elbo_estimate(&bundle.latent_view(which), &bundle.prior_schedule(), &z, n_mc, seed)?;
    let cfg = bundle.config();
    Ok(BitrateReport::from_estimate(est, cfg.latent.numel(), cfg.image.pixels(), bundle.steps_trained == 0))
}

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(peak² / MSE)` over all elements, capped at [`PSNR_CAP`].
pub fn psnr(x: &Tensor, y: &Tensor, peak: f64) -> Result<f64> {
    x.ensure_same_shape(y)?;
    if x.is_empty() {
        return Err(Error::config("psnr of empty tensors"));
    }
    let mse = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

/// Per-image PSNR averaged over the batch.
pub fn mean_psnr(x: &Tensor, y: &Tensor, peak: f64) -> Result<Estimate> {
    let m = x.sample_len() as f64;
    let per: Vec<f64> = x.row_sq_dist(y)?.into_iter().map(|s| psnr_from_mse(s / m, peak)).collect();
    Ok(Estimate::from_samples(&per))
}

/// Peak-to-peak range of images in `[-1, 1]`.
pub const IMAGE_PEAK: f64 = 2.0;

/// Covariance ridge added when either covariance is near singular.
pub const FRECHET_RIDGE: f64 = 1e-6;

/// Fréchet distance between Gaussian fits of two feature sets `[n, d]`.
pub fn frechet_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    if a.batch() < 2 || b.batch() < 2 {
        return Err(Error::config("Fréchet distance needs at least two vectors per set"));
    }
    let d = a.shape()[1];
    let (ma, mut ca) = linalg::mean_cov(a.data(), d);
    let (mb, mut cb) = linalg::mean_cov(b.data(), d);
    let near_singular = |c: &[f64]| {
        let (vals, _) = linalg::sym_eigen(c, d);
        let top = vals.iter().cloned().fold(0.0, f64::max);
        vals.iter().any(|&v| v <= FRECHET_RIDGE * top.max(1.0))
    };
    if near_singular(&ca) || near_singular(&cb) {
        for i in 0..d {
            ca[i * d + i] += FRECHET_RIDGE;
            cb[i * d + i] += FRECHET_RIDGE;
        }
    }
    let mean_term: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum();
    // tr((Σa Σb)^½) = tr((Σa^½ Σb Σa^½)^½), the inner matrix being symmetric PSD
    let sa = linalg::sqrt_psd(&ca, d);
    let inner = linalg::matmul(&linalg::matmul(&sa, &cb, d), &sa, d);
    let (vals, _) = linalg::sym_eigen(&inner, d);
    let cross: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dist = mean_term + linalg::trace(&ca, d) + linalg::trace(&cb, d) - 2.0 * cross;
    Ok(dist.max(0.0))
}

/// Fixed feature map for Fréchet comparisons.
pub trait FeatureExtractor {
    /// `[n, h, w, c]` images to `[n, d]` features.
    fn features(&self, x: &Tensor) -> Result<Tensor>;
}

/// `tanh(x W)` with a seeded Gaussian `W`.
#[derive(Debug, Clone)]
pub struct RandomFeatures {
    w: Vec<f64>,
    din: usize,
    dout: usize,
}

impl RandomFeatures {
    pub fn new(image: ImageShape, dout: usize, seed: u64) -> Self {
        let din = image.numel();
        let scale = 1.0 / (din as f64).sqrt();
        let w = rng::normals(&mut rng::rng_for(seed, "features.random"), din * dout).into_iter().map(|v| v * scale).collect();
        Self { w, din, dout }
    }
}

impl FeatureExtractor for RandomFeatures {
    fn features(&self, x: &Tensor) -> Result<Tensor> {
        if x.sample_len() != self.din {
            return Err(Error::shape(&[self.din], &[x.sample_len()]));
        }
        let n = x.batch();
        let mut out = vec![0.0; n * self.dout];
        for i in 0..n {
            let row = x.sample(i);
            for (k, &xk) in row.iter().enumerate() {
                for j in 0..self.dout {
                    out[i * self.dout + j] += xk * self.w[k * self.dout + j];
                }
            }
        }
        Tensor::new(&[n, self.dout], out.into_iter().map(|v| v.tanh()).collect())
    }
}

/// Seed used for the frozen classifier features unless stated otherwise.
pub const FEATURE_SEED: u64 = 1234;

/// Hidden layer of a small classifier trained once on generator labels,
/// then frozen.
#[derive(Debug, Clone)]
pub struct ClassifierFeatures {
    store: ParamStore,
    l1: Linear,
    l2: Linear,
    image: ImageShape,
}

impl ClassifierFeatures {
    pub const HIDDEN: usize = 64;
    pub const FEATURES: usize = 32;

    /// Fits one-hot targets by squared error with Adam.
    pub fn train<D: ImageDataset + ?Sized>(data: &D, pool: &[usize], classes: usize, steps: usize, seed: u64) -> Result<Self> {
        if classes == 0 || pool.is_empty() {
            return Err(Error::config("classifier needs classes and training data"));
        }
        let image = data.image_shape();
        let mut store = ParamStore::default();
        let mut r = rng::rng_for(seed, "features.init");
        let l1 = Linear::new(&mut store, "clf.l1", image.numel(), Self::HIDDEN, Init::VarianceScaling(1.0), &mut r);
        let l2 = Linear::new(&mut store, "clf.l2", Self::HIDDEN, Self::FEATURES, Init::VarianceScaling(1.0), &mut r);
        let head = Linear::new(&mut store, "clf.head", Self::FEATURES, classes, Init::VarianceScaling(1.0), &mut r);
        let cfg = OptimConfig { learning_rate: 3e-3, warmup_steps: 0, ema_decay: 0.0, ..Default::default() };
        let mut opt = Adam::new(cfg, &store, &["clf."])?;
        let batch = 32;
        for step in 0..steps {
            let mut br = rng::stream(seed, "features.batch", step as u64);
            let idx: Vec<usize> = (0..batch).map(|_| pool[rng::permutation(&mut br, pool.len())[0]]).collect();
            let x = data.batch(&idx)?.reshape(&[batch, image.numel()])?;
            let mut target = vec![0.0; batch * classes];
            for (i, &k) in idx.iter().enumerate() {
                let lab = data.label(k).ok_or_else(|| Error::config("classifier needs labelled data"))?;
                target[i * classes + lab.min(classes - 1)] = 1.0;
            }
            let mut tape = Tape::new();
            let grads = {
                let mut ctx = Ctx::eval(&mut tape, &store);
                let xv = ctx.tape.leaf(&x);
                let h = Self::hidden(&l1, &l2, &mut ctx, xv)?;
                let out = head.forward(&mut ctx, h)?;
                let tv = ctx.tape.leaf_raw(&[batch, classes], target);
                let d = ctx.tape.sub(out, tv)?;
                let sq = ctx.tape.mul(d, d)?;
                let loss = ctx.tape.sum(sq);
                tape.backward(loss)?
            };
            opt.step(&mut store, &grads)?;
        }
        Ok(Self { store, l1, l2, image })
    }

    fn hidden(l1: &Linear, l2: &Linear, ctx: &mut Ctx<'_>, x: crate::nn::Var) -> Result<crate::nn::Var> {
        let h = l1.forward(ctx, x)?;
        let h = ctx.tape.silu(h);
        let h = l2.forward(ctx, h)?;
        Ok(ctx.tape.silu(h))
    }
}

impl FeatureExtractor for ClassifierFeatures {
    fn features(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.batch();
        if x.sample_len() != self.image.numel() {
            return Err(Error::shape(&[self.image.numel()], &[x.sample_len()]));
        }
        let x = x.clone().reshape(&[n, self.image.numel()])?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval(&mut tape, &self.store);
        let xv = ctx.tape.leaf(&x);
        let h = Self::hidden(&self.l1, &self.l2, &mut ctx, xv)?;
        Ok(tape.tensor(h))
    }
}

/// Fréchet distance of reconstructions against the same originals, with a
/// paired-bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfidReport {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
}

pub fn rfid<F: FeatureExtractor + ?Sized>(extractor: &F, originals: &Tensor, reconstructions: &Tensor, bootstrap: usize, seed: u64) -> Result<RfidReport> {
    originals.ensure_same_shape(reconstructions)?;
    let n = originals.batch();
    if n < 2 {
        return Err(Error::config("rFID needs at least two samples"));
    }
    let fa = extractor.features(reconstructions)?;
    let fb = extractor.features(originals)?;
    let value = frechet_distance(&fa, &fb)?;
    let mut reps = Vec::with_capacity(bootstrap);
    let mut r = rng::rng_for(seed, "rfid.bootstrap");
    for _ in 0..bootstrap {
        let idx: Vec<usize> = (0..n).map(|_| (rng::uniform(&mut r) * n as f64) as usize % n).collect();
        reps.push(frechet_distance(&fa.select(&idx), &fb.select(&idx))?);
    }
    let std_error = if reps.len() > 1 {
        let m = reps.iter().sum::<f64>() / reps.len() as f64;
        (reps.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (reps.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(RfidReport { value, std_error, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopMode {
    Inference,
    /// Forward plus backward, counted as three forward passes.
    Training,
}

/// FLOPs per sample: `2 · tokens · in · out` per dense map plus `4 · T² · d`
/// per attention (scores and weighted sum).
pub fn flop_count(spec: &NetworkSpec, mode: FlopMode) -> u64 {
    let lin: u64 = spec.linears.iter().map(|l| 2 * (l.tokens * l.din * l.dout) as u64).sum();
    let att: u64 = spec.attention.iter().map(|a| 4 * (a.tokens * a.tokens * a.dim) as u64).sum();
    let inference = lin + att;
    match mode {
        FlopMode::Inference => inference,
        FlopMode::Training => 3 * inference,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkCost {
    pub params: usize,
    pub inference_flops: u64,
    pub training_flops: u64,
}

impl NetworkCost {
    fn of(spec: &NetworkSpec) -> Self {
        Self {
            params: spec.param_count(),
            inference_flops: flop_count(spec, FlopMode::Inference),
            training_flops: flop_count(spec, FlopMode::Training),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub encoder: NetworkCost,
    pub prior: NetworkCost,
    pub decoder: NetworkCost,
    pub base: Option<NetworkCost>,
}

/// Parameter and per-sample FLOP counts computed from the configuration only.
pub fn model_cost(cfg: &ModelConfig) -> Result<ModelCost> {
    cfg.validate()?;
    Ok(ModelCost {
        encoder: NetworkCost::of(&encoder_spec(cfg)),
        prior: NetworkCost::of(&mixer_spec(&cfg.prior, &cfg.latent)),
        decoder: NetworkCost::of(&decoder_spec(cfg)),
        base: cfg.base.as_ref().map(|b| NetworkCost::of(&mixer_spec(b, &cfg.latent))),
    })
}

/// Inverse standard-normal CDF (rational approximation, relative error ~1e-9).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2, 1.383577518672690e2, -3.066479806614716e1, 2.506628277459239];
    const B: [f64; 5] = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838, -2.549732539343734, 4.374664141464968, 2.938163982698783];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let plow = 0.02425;
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Wasserstein-1 distance between the empirical distribution of `samples`
/// and `N(mean, std²)`, by matching sorted samples to normal quantiles.
pub fn wasserstein1_to_normal(samples: &[f64], mean: f64, std: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = s.len() as f64;
    s.iter().enumerate().map(|(i, &x)| (x - (mean + std * normal_quantile((i as f64 + 0.5) / n))).abs()).sum::<f64>() / n
}

/// Histogram of blob modes detected in a batch of images.
pub fn blob_mode_histogram(images: &Tensor, shape: ImageShape, modes: usize) -> Vec<usize> {
    let mut hist = vec![0; modes];
    for i in 0..images.batch() {
        if let Some(m) = blob_mode(images.sample(i), shape, modes) {
            hist[m] += 1;
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_matches_known_values() {
        assert!(normal_quantile(0.5).abs() < 1e-12);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-8);
        assert!((normal_quantile(0.001) + 3.090232306167813).abs() < 1e-7);
    }

    #[test]
    fn report_ratio_identity() {
        let r = BitrateReport::from_estimate(Estimate { mean: 3.0, std_error: 0.1, n: 10 }, 64, 256, false);
        assert!((r.bits_per_pixel - r.bits_per_dim * 64.0 / 256.0).abs() < 1e-12);
    }
}
