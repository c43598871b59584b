//! Loss terms: the unweighted prior ELBO, endpoint KLs, the weighted decoder
//! loss, the learned-variance entropy correction and the ablation baselines.
//!
//! All per-sample quantities are in nats, summed over latent or pixel
//! dimensions; batch reductions are means over samples.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::model::Denoiser;
use crate::nn::layers::{channel_slice_index, Ctx};
use crate::nn::tape::Var;
use crate::nn::ModelBundle;
use crate::schedule::{alpha_sigma, alpha_sigma_unchecked, forward_diffuse, forward_diffuse_rows, NoiseSchedule, WeightingConfig};
use crate::{Error, Result, Tensor};

/// `z0 = α(λ_z0) · z_clean + σ(λ_z0) · noise`.
pub fn noise_latent(z_clean: &Tensor, lambda_z0: f64, noise: &Tensor) -> Result<Tensor> {
    forward_diffuse(z_clean, lambda_z0, noise)
}

/// Per-dimension `KL[N(m, v) | N(0, 1)]`.
pub fn gaussian_kl(mean: f64, var: f64) -> f64 {
    0.5 * (mean * mean + var - 1.0 - var.ln())
}

/// `σ² - 1 - ln σ²` for the VP pair at `lambda`, accurate when `σ² ≈ 1`.
fn var_penalty(lambda: f64) -> f64 {
    // with a = α² = sigmoid(λ): σ² - 1 - ln σ² = -a - ln(1 - a)
    let a = alpha_sigma_unchecked(lambda).alpha.powi(2);
    -a - (-a).ln_1p()
}

/// Per-sample KL between `N(α z, σ² I)` at `lambda` and `N(0, I)`.
fn diffused_kl(z: &Tensor, lambda: f64) -> Vec<f64> {
    let a2 = alpha_sigma_unchecked(lambda).alpha.powi(2);
    let per_dim = 0.5 * var_penalty(lambda);
    let m = z.sample_len();
    (0..z.batch())
        .map(|i| 0.5 * a2 * z.sample(i).iter().map(|v| v * v).sum::<f64>() + per_dim * m as f64)
        .collect()
}

/// `KL[N(α₁ z, σ₁² I) | N(0, I)]` at the noisiest end of `schedule`, per sample.
pub fn endpoint_kl_prior(z_clean: &Tensor, schedule: &NoiseSchedule) -> Vec<f64> {
    diffused_kl(z_clean, schedule.lambda_min())
}

/// `KL[N(α₀ z, σ₀² I) | N(0, I)]` at the encoding log-SNR, per sample.
pub fn normal_prior_kl(z_clean: &Tensor, lambda_z0: f64) -> Result<Vec<f64>> {
    alpha_sigma(lambda_z0)?;
    Ok(diffused_kl(z_clean, lambda_z0))
}

/// Per-sample `-½ Σ ln(σ_z² e^{λ_z0} + 1)`; never positive.
pub fn learned_variance_entropy(sigma_z: &Tensor, lambda_z0: f64) -> Result<Vec<f64>> {
    if let Some(&s) = sigma_z.data().iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Domain { what: "encoder std", value: s });
    }
    Ok((0..sigma_z.batch())
        .map(|i| sigma_z.sample(i).iter().map(|s| -0.5 * (s * s * lambda_z0.exp()).ln_1p()).sum())
        .collect())
}

/// Per-sample unweighted ELBO integrand `elbo_weight_x(t) · ‖z - ẑ‖²`.
pub fn prior_mse_term(schedule: &NoiseSchedule, t: &[f64], z_clean: &Tensor, z_hat: &Tensor) -> Result<Vec<f64>> {
    let sq = z_clean.row_sq_dist(z_hat)?;
    t.iter().zip(sq).map(|(&t, s)| Ok(schedule.elbo_weight_x(t)? * s)).collect()
}

/// Per-sample decoder term from x-prediction: `-dλ/dt/2 · c_lf · e^λ sigmoid(b - λ) · ‖x - x̂‖²`.
pub fn decoder_term_x(schedule: &NoiseSchedule, cfg: &WeightingConfig, t: &[f64], x: &Tensor, x_hat: &Tensor) -> Result<Vec<f64>> {
    let sq = x.row_sq_dist(x_hat)?;
    t.iter()
        .zip(sq)
        .map(|(&t, s)| {
            let lambda = schedule.logsnr(t)?;
            Ok(-schedule.dlogsnr_dt(t)? / 2.0 * cfg.x_weight(lambda) * s)
        })
        .collect()
}

/// Per-sample decoder term from noise residuals: `-dλ/dt/2 · c_lf · sigmoid(b - λ) · ‖ε - ε̂‖²`.
pub fn decoder_term_eps(schedule: &NoiseSchedule, cfg: &WeightingConfig, t: &[f64], eps: &Tensor, eps_hat: &Tensor) -> Result<Vec<f64>> {
    let sq = eps.row_sq_dist(eps_hat)?;
    t.iter()
        .zip(sq)
        .map(|(&t, s)| {
            let lambda = schedule.logsnr(t)?;
            Ok(-schedule.dlogsnr_dt(t)? / 2.0 * crate::schedule::decoder_weight_eps(lambda, cfg) * s)
        })
        .collect()
}

/// `ε̂ = (x_t - α x̂) / σ`, row-wise.
pub fn eps_from_x(x_t: &Tensor, x_hat: &Tensor, lambda: &[f64]) -> Result<Tensor> {
    x_t.ensure_same_shape(x_hat)?;
    if lambda.len() != x_t.batch() {
        return Err(Error::shape(&[x_t.batch()], &[lambda.len()]));
    }
    let m = x_t.sample_len();
    let mut out = Tensor::zeros(x_t.shape());
    for (i, &l) in lambda.iter().enumerate() {
        let s = alpha_sigma(l)?;
        for j in i * m..(i + 1) * m {
            out.data_mut()[j] = (x_t.data()[j] - s.alpha * x_hat.data()[j]) / s.sigma;
        }
    }
    Ok(out)
}

/// Per-sample `c_lf · mean((x - x̂)²)`.
pub fn mse_reconstruction_loss(x: &Tensor, recon: &Tensor, loss_factor: f64) -> Result<Vec<f64>> {
    let m = x.sample_len().max(1) as f64;
    Ok(x.row_sq_dist(recon)?.into_iter().map(|s| loss_factor * s / m).collect())
}

/// Prior ELBO terms for a denoiser on one batch of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorTerms {
    pub mse: Vec<f64>,
    pub endpoint_kl: Vec<f64>,
}

impl PriorTerms {
    pub fn totals(&self) -> Vec<f64> {
        self.mse.iter().zip(&self.endpoint_kl).map(|(a, b)| a + b).collect()
    }
}

/// Unweighted prior loss: diffuse `z_clean` to `t`, denoise, and add the endpoint KL.
pub fn prior_loss<D: Denoiser + ?Sized>(
    model: &D,
    schedule: &NoiseSchedule,
    z_clean: &Tensor,
    t: &[f64],
    noise: &Tensor,
) -> Result<PriorTerms> {
    let lambda = t.iter().map(|&t| schedule.logsnr(t)).collect::<Result<Vec<_>>>()?;
    let z_t = forward_diffuse_rows(z_clean, &lambda, noise)?;
    let z_hat = model.denoise(&z_t, &lambda)?;
    let mse = prior_mse_term(schedule, t, z_clean, &z_hat)?;
    if mse.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prior loss"));
    }
    Ok(PriorTerms { mse, endpoint_kl: endpoint_kl_prior(z_clean, schedule) })
}

/// Weighted decoder loss for a decoder view (already conditioned on `z0`).
pub fn decoder_loss<D: Denoiser + ?Sized>(
    model: &D,
    schedule: &NoiseSchedule,
    cfg: &WeightingConfig,
    x: &Tensor,
    t: &[f64],
    noise: &Tensor,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let lambda = t.iter().map(|&t| schedule.logsnr(t)).collect::<Result<Vec<_>>>()?;
    let x_t = forward_diffuse_rows(x, &lambda, noise)?;
    let x_hat = model.denoise(&x_t, &lambda)?;
    let out = decoder_term_x(schedule, cfg, t, x, &x_hat)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decoder loss"));
    }
    Ok(out)
}

/// Batch-mean loss terms of one step, in nats.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub prior_mse_term: f64,
    pub endpoint_kl: f64,
    pub decoder_term: f64,
    /// Ablation and stage extras: entropy correction, discounted normal KL,
    /// concurrent base-model loss. Zero for plain stage-1 training.
    pub auxiliary_term: f64,
    pub total: f64,
    pub per_sample: Vec<f64>,
}

impl LossBreakdown {
    pub(crate) fn from_rows(prior: &[f64], kl: &[f64], dec: &[f64], aux: &[f64]) -> Self {
        let n = prior.len();
        let mean = |v: &[f64]| if n == 0 { 0.0 } else { v.iter().sum::<f64>() / n as f64 };
        let per_sample: Vec<f64> = (0..n).map(|i| prior[i] + kl[i] + dec[i] + aux[i]).collect();
        let (p, k, d, a) = (mean(prior), mean(kl), mean(dec), mean(aux));
        Self { prior_mse_term: p, endpoint_kl: k, decoder_term: d, auxiliary_term: a, total: p + k + d + a, per_sample }
    }

    pub fn is_finite(&self) -> bool {
        [self.prior_mse_term, self.endpoint_kl, self.decoder_term, self.auxiliary_term, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// How the latent is regularized in stage-1 training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorMode {
    /// Diffusion prior trained jointly with the encoder.
    Diffusion,
    /// Diffusion prior sees a stop-gradient latent; the encoder is instead
    /// regularized by a discounted KL to `N(0, I)`.
    StopGradient { normal_kl_weight: f64 },
    /// Closed-form KL to `N(0, I)` replaces the diffusion prior.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    Diffusion,
    /// Deterministic reconstruction head with a scaled MSE loss.
    MseReconstruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub weighting: WeightingConfig,
    pub prior_mode: PriorMode,
    pub decoder_mode: DecoderMode,
    /// Multiplier on the latent terms (prior loss and endpoint KL, or the
    /// normal-prior KL). `1` is the bound; smaller values only make sense
    /// during a warmup.
    pub prior_scale: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            weighting: WeightingConfig::default(),
            prior_mode: PriorMode::Diffusion,
            decoder_mode: DecoderMode::Diffusion,
            prior_scale: 1.0,
        }
    }
}

/// Random draws of one stage-1 step, in the order they are consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Draws {
    /// Reparameterization noise of a learned-variance encoder (unused otherwise).
    pub eps_v: Tensor,
    pub t_prior: Vec<f64>,
    pub eps_prior: Tensor,
    pub eps_z: Tensor,
    pub t_decoder: Vec<f64>,
    pub eps_decoder: Tensor,
}

/// Random draws of one latent-diffusion (base) step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraws {
    pub t: Vec<f64>,
    pub eps: Tensor,
}

fn lambdas(schedule: &NoiseSchedule, t: &[f64]) -> Result<Vec<f64>> {
    t.iter().map(|&t| schedule.logsnr(t)).collect()
}

/// `α(λ_i) · clean_i + σ(λ_i) · eps_i` on the tape; `eps` is a constant.
fn diffuse_var(ctx: &mut Ctx<'_>, clean: Var, lambda: &[f64], eps: &Tensor) -> Result<Var> {
    let (a, s): (Vec<f64>, Vec<f64>) = lambda
        .iter()
        .map(|&l| {
            let p = alpha_sigma_unchecked(l);
            (p.alpha, p.sigma)
        })
        .unzip();
    let scaled = ctx.tape.scale_rows(clean, a)?;
    let e = ctx.tape.leaf(eps);
    let noise = ctx.tape.scale_rows(e, s)?;
    ctx.tape.add(scaled, noise)
}

/// `Σ_dims (a - b)²` per row, scaled per row by `w`.
fn weighted_sq(ctx: &mut Ctx<'_>, a: Var, b: Var, w: Vec<f64>) -> Result<Var> {
    let d = ctx.tape.sub(a, b)?;
    let sq = ctx.tape.mul(d, d)?;
    let rows = ctx.tape.sum_rows(sq);
    ctx.tape.scale_rows(rows, w)
}

/// `Σ_dims z² · k` per row.
fn scaled_sq_norm(ctx: &mut Ctx<'_>, z: Var, k: f64) -> Var {
    let sq = ctx.tape.mul(z, z).expect("same var");
    let rows = ctx.tape.sum_rows(sq);
    ctx.tape.scale(rows, k)
}

/// Differentiable per-row loss pieces and their values.
pub struct GraphTerms {
    /// Scalar batch-mean loss to differentiate.
    pub loss: Var,
    pub breakdown: LossBreakdown,
    /// Clean latent of the batch, when the graph encodes images.
    pub z_clean: Option<Var>,
}

fn finish(ctx: &mut Ctx<'_>, parts: &[Var], n: usize, breakdown: LossBreakdown) -> Result<GraphTerms> {
    let mut acc: Option<Var> = None;
    for &p in parts {
        acc = Some(match acc {
            None => p,
            Some(a) => ctx.tape.add(a, p)?,
        });
    }
    let rows = acc.ok_or_else(|| Error::config("empty loss"))?;
    let total = ctx.tape.sum(rows);
    let loss = ctx.tape.scale(total, 1.0 / n as f64);
    if !breakdown.is_finite() || !ctx.tape.value(loss)[0].is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(GraphTerms { loss, breakdown, z_clean: None })
}

/// Taped stage-1 loss `L_z + L_x` (plus ablation extras) for a batch `x`.
/// `decoder_shift` lowers the decoder sigmoid bias (single-stage training).
pub fn stage1_graph(
    bundle: &ModelBundle,
    ctx: &mut Ctx<'_>,
    x: &Tensor,
    draws: &Stage1Draws,
    cfg: &ObjectiveConfig,
    decoder_shift: f64,
) -> Result<GraphTerms> {
    cfg.weighting.validate()?;
    let mc = bundle.config();
    let n = x.batch();
    let lat = mc.latent;
    let lambda_z0 = lat.lambda_z0;
    let prior_schedule = bundle.prior_schedule();
    let dec_schedule = bundle.decoder_schedule();
    let zero = vec![0.0; n];

    let xv = ctx.tape.leaf(x);
    let enc = bundle.encoder_net().forward(ctx, xv)?;
    let rows = n * lat.h * lat.w;
    let latent_shape = [n, lat.h, lat.w, lat.c];
    let mut aux_rows = zero.clone();
    let mut parts = Vec::new();

    let z_clean = if bundle.encoder_net().learned_variance() {
        let mean = ctx.tape.gather(enc, channel_slice_index(rows, 2 * lat.c, 0, lat.c), &latent_shape)?;
        let log_std = ctx.tape.gather(enc, channel_slice_index(rows, 2 * lat.c, lat.c, lat.c), &latent_shape)?;
        let std = ctx.tape.exp(log_std);
        let ev = ctx.tape.leaf(&draws.eps_v);
        let spread = ctx.tape.mul(std, ev)?;
        // L_e = -½ Σ softplus(2 ln σ_z + λ_z0)
        let shifted = ctx.tape.scale(log_std, 2.0);
        let bias = ctx.tape.leaf(&Tensor::full(&latent_shape, lambda_z0));
        let arg = ctx.tape.add(shifted, bias)?;
        let sp = ctx.tape.softplus(arg);
        let le_rows = ctx.tape.sum_rows(sp);
        let le = ctx.tape.scale(le_rows, -0.5);
        aux_rows = add_rows(&aux_rows, ctx.tape.value(le));
        parts.push(le);
        ctx.tape.add(mean, spread)?
    } else {
        enc
    };

    let m_lat = (lat.h * lat.w * lat.c) as f64;
    let ps = cfg.prior_scale;
    if !(ps >= 0.0 && ps.is_finite()) {
        return Err(Error::config("prior_scale must be finite and nonnegative"));
    }
    let (prior_rows, kl_rows) = match cfg.prior_mode {
        PriorMode::Diffusion | PriorMode::StopGradient { .. } => {
            let zin = if matches!(cfg.prior_mode, PriorMode::StopGradient { .. }) { ctx.tape.detach(z_clean) } else { z_clean };
            let lambda = lambdas(&prior_schedule, &draws.t_prior)?;
            let z_t = diffuse_var(ctx, zin, &lambda, &draws.eps_prior)?;
            let z_hat = bundle.prior_net().forward(ctx, z_t, &lambda)?;
            let w = draws.t_prior.iter().map(|&t| prior_schedule.elbo_weight_x(t)).collect::<Result<Vec<_>>>()?;
            let mse = weighted_sq(ctx, zin, z_hat, w)?;
            let mse = ctx.tape.scale(mse, ps);
            let l1 = prior_schedule.lambda_min();
            let kl = scaled_sq_norm(ctx, zin, 0.5 * alpha_sigma_unchecked(l1).alpha.powi(2) * ps);
            let kl_const = 0.5 * var_penalty(l1) * m_lat * ps;
            let kl_vals: Vec<f64> = ctx.tape.value(kl).iter().map(|v| v + kl_const).collect();
            let mse_vals = ctx.tape.value(mse).to_vec();
            parts.push(mse);
            parts.push(kl);
            if let PriorMode::StopGradient { normal_kl_weight } = cfg.prior_mode {
                let (nk, consts) = normal_kl_var(ctx, z_clean, lambda_z0, m_lat, normal_kl_weight);
                let vals: Vec<f64> = ctx.tape.value(nk).iter().map(|v| v + consts).collect();
                aux_rows = add_rows(&aux_rows, &vals);
                parts.push(nk);
            }
            (mse_vals, kl_vals)
        }
        PriorMode::Normal => {
            let (nk, consts) = normal_kl_var(ctx, z_clean, lambda_z0, m_lat, ps);
            let vals: Vec<f64> = ctx.tape.value(nk).iter().map(|v| v + consts).collect();
            parts.push(nk);
            (zero.clone(), vals)
        }
    };

    let z0 = diffuse_var(ctx, z_clean, &vec![lambda_z0; n], &draws.eps_z)?;
    let dec_rows = match cfg.decoder_mode {
        DecoderMode::Diffusion => {
            let lambda = lambdas(&dec_schedule, &draws.t_decoder)?;
            let x_t = forward_diffuse_rows(x, &lambda, &draws.eps_decoder)?;
            let xt = ctx.tape.leaf(&x_t);
            let x_hat = bundle.decoder_net().forward(ctx, xt, z0, &lambda)?;
            let weighting = WeightingConfig { bias: cfg.weighting.bias - decoder_shift, ..cfg.weighting };
            let w = draws
                .t_decoder
                .iter()
                .zip(&lambda)
                .map(|(&t, &l)| Ok(-dec_schedule.dlogsnr_dt(t)? / 2.0 * weighting.x_weight(l)))
                .collect::<Result<Vec<_>>>()?;
            let term = weighted_sq(ctx, xv, x_hat, w)?;
            parts.push(term);
            ctx.tape.value(term).to_vec()
        }
        DecoderMode::MseReconstruction => {
            let zero_img = ctx.tape.leaf(&Tensor::zeros(x.shape()));
            let x_hat = bundle.decoder_net().forward(ctx, zero_img, z0, &vec![dec_schedule.lambda_min(); n])?;
            let m = x.sample_len() as f64;
            let term = weighted_sq(ctx, xv, x_hat, vec![cfg.weighting.loss_factor / m; n])?;
            parts.push(term);
            ctx.tape.value(term).to_vec()
        }
    };

    let breakdown = LossBreakdown::from_rows(&prior_rows, &kl_rows, &dec_rows, &aux_rows);
    let mut terms = finish(ctx, &parts, n, breakdown)?;
    terms.z_clean = Some(z_clean);
    Ok(terms)
}

fn normal_kl_var(ctx: &mut Ctx<'_>, z: Var, lambda_z0: f64, m: f64, weight: f64) -> (Var, f64) {
    let a2 = alpha_sigma_unchecked(lambda_z0).alpha.powi(2);
    let v = scaled_sq_norm(ctx, z, 0.5 * a2 * weight);
    (v, 0.5 * var_penalty(lambda_z0) * m * weight)
}

fn add_rows(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Taped latent-diffusion loss for the base model on fixed clean latents:
/// `-dλ/dt/2 · c_lf · e^λ sigmoid(b - λ) · ‖z - ẑ‖²` plus the endpoint KL.
/// With [`WeightingConfig::unweighted`] this is the prior ELBO.
pub fn base_graph(
    bundle: &ModelBundle,
    ctx: &mut Ctx<'_>,
    z_clean: &Tensor,
    draws: &LatentDraws,
    weighting: &WeightingConfig,
) -> Result<GraphTerms> {
    weighting.validate()?;
    let net = bundle.base_net().ok_or_else(|| Error::config("bundle has no base model"))?;
    let schedule = bundle.prior_schedule();
    let n = z_clean.batch();
    let zv = ctx.tape.leaf(z_clean);
    let lambda = lambdas(&schedule, &draws.t)?;
    let z_t = diffuse_var(ctx, zv, &lambda, &draws.eps)?;
    let z_hat = net.forward(ctx, z_t, &lambda)?;
    let w = draws
        .t
        .iter()
        .zip(&lambda)
        .map(|(&t, &l)| Ok(-schedule.dlogsnr_dt(t)? / 2.0 * weighting.x_weight(l)))
        .collect::<Result<Vec<_>>>()?;
    let term = weighted_sq(ctx, zv, z_hat, w)?;
    let vals = ctx.tape.value(term).to_vec();
    let kl = endpoint_kl_prior(z_clean, &schedule);
    let zero = vec![0.0; n];
    let breakdown = LossBreakdown::from_rows(&vals, &kl, &zero, &zero);
    finish(ctx, &[term], n, breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_kl_matches_formula() {
        assert!((gaussian_kl(1.0, 0.25) - 0.5 * (0.25 + 4f64.ln())).abs() < 1e-15);
        assert_eq!(gaussian_kl(0.0, 1.0), 0.0);
    }

    #[test]
    fn var_penalty_is_accurate_near_one() {
        let l = -15.0;
        let a2 = 1.0 / (1.0 + 15f64.exp());
        // second-order expansion: -a - ln(1-a) ≈ a²/2
        assert!((var_penalty(l) - a2 * a2 / 2.0).abs() < 1e-20);
        assert!(var_penalty(0.0) > 0.0);
        assert!((var_penalty(0.0) - (0.5 - 1.0 - 0.5f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn breakdown_total_is_sum() {
        let b = LossBreakdown::from_rows(&[1.0, 2.0], &[0.5, 0.5], &[3.0, 1.0], &[0.0, 0.0]);
        assert!((b.total - (b.prior_mse_term + b.endpoint_kl + b.decoder_term)).abs() < 1e-12);
        assert_eq!(b.per_sample, vec![4.5, 3.5]);
    }
}
