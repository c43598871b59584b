use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::encoder::EncoderNet;
use super::layers::Ctx;
use super::mixer::MixerDenoiser;
use super::params::ParamStore;
use super::tape::Tape;
use super::unet::UNetDecoder;
use crate::model::{Denoiser, Encoder};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result, Tensor};

/// Which latent denoiser to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentModel {
    Prior,
    Base,
}

/// All networks of one model with their parameters. Parameter names carry a
/// network prefix: `encoder.`, `prior.`, `decoder.`, `base.`.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    config: ModelConfig,
    seed: u64,
    pub params: ParamStore,
    /// Exponential moving average of `params`, used for evaluation when present.
    pub ema: Option<ParamStore>,
    pub steps_trained: usize,
    encoder: EncoderNet,
    prior: MixerDenoiser,
    decoder: UNetDecoder,
    base: Option<MixerDenoiser>,
}

const LAMBDA_TOL: f64 = 1e-9;

impl ModelBundle {
    /// Deterministic initialization: each network draws from its own seed stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let encoder = EncoderNet::new(&config, &mut params, &mut rng::rng_for(seed, "init.encoder"));
        let prior = MixerDenoiser::new("prior", &config.prior, &config.latent, &mut params, &mut rng::rng_for(seed, "init.prior"));
        let decoder = UNetDecoder::new(&config, &mut params, &mut rng::rng_for(seed, "init.decoder"));
        let base = config
            .base
            .as_ref()
            .map(|b| MixerDenoiser::new("base", b, &config.latent, &mut params, &mut rng::rng_for(seed, "init.base")));
        Ok(Self { config, seed, params, ema: None, steps_trained: 0, encoder, prior, decoder, base })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encoder_net(&self) -> &EncoderNet {
        &self.encoder
    }

    pub fn prior_net(&self) -> &MixerDenoiser {
        &self.prior
    }

    pub fn decoder_net(&self) -> &UNetDecoder {
        &self.decoder
    }

    pub fn base_net(&self) -> Option<&MixerDenoiser> {
        self.base.as_ref()
    }

    pub fn latent_net(&self, which: LatentModel) -> Result<&MixerDenoiser> {
        match which {
            LatentModel::Prior => Ok(&self.prior),
            LatentModel::Base => self.base.as_ref().ok_or_else(|| Error::config("bundle has no base model")),
        }
    }

    pub fn prior_schedule(&self) -> NoiseSchedule {
        self.config.prior_schedule().expect("validated")
    }

    pub fn decoder_schedule(&self) -> NoiseSchedule {
        self.config.decoder_schedule
    }

    /// Parameters used for evaluation: the moving average when present.
    pub fn eval_params(&self) -> &ParamStore {
        self.ema.as_ref().unwrap_or(&self.params)
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite() && self.ema.as_ref().map_or(true, ParamStore::all_finite)
    }

    fn image_batch(&self, x: &Tensor) -> Result<usize> {
        let d = self.config.image.dims();
        let n = x.batch();
        if x.shape().len() != 4 || x.shape()[1..] != d {
            return Err(Error::shape(&[n, d[0], d[1], d[2]], x.shape()));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("input"));
        }
        Ok(n)
    }

    fn latent_batch(&self, z: &Tensor) -> Result<usize> {
        let d = self.config.latent.dims();
        let n = z.batch();
        if z.shape().len() != 4 || z.shape()[1..] != d {
            return Err(Error::shape(&[n, d[0], d[1], d[2]], z.shape()));
        }
        if !z.all_finite() {
            return Err(Error::NonFinite("latent"));
        }
        Ok(n)
    }

    fn check_lambda(schedule: &NoiseSchedule, lambda: &[f64], n: usize) -> Result<()> {
        if lambda.len() != n {
            return Err(Error::shape(&[n], &[lambda.len()]));
        }
        for &l in lambda {
            if !(l >= schedule.lambda_min() - LAMBDA_TOL && l <= schedule.lambda_max() + LAMBDA_TOL) {
                return Err(Error::Domain { what: "log-SNR", value: l });
            }
        }
        Ok(())
    }

    /// Raw encoder output: `[n, h, w, c]`, or `[n, h, w, 2c]` with a learned variance.
    pub fn encode_raw(&self, x: &Tensor) -> Result<Tensor> {
        self.encode_raw_with(self.eval_params(), x)
    }

    /// [`Self::encode_raw`] with an explicit parameter set (for example the
    /// live training parameters instead of the moving average).
    pub fn encode_raw_with(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.image_batch(x)?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval(&mut tape, store);
        let xv = ctx.tape.leaf(x);
        let out = self.encoder.forward(&mut ctx, xv)?;
        Ok(tape.tensor(out))
    }

    /// Deterministic clean latent (the mean with a learned variance).
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let raw = self.encode_raw(x)?;
        if !self.encoder.learned_variance() {
            return Ok(raw);
        }
        Ok(split_mean_log_std(&raw, self.config.latent.c).0)
    }

    /// Mean and standard deviation of a learned-variance encoder.
    pub fn encode_mean_std(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        if !self.encoder.learned_variance() {
            return Err(Error::config("encoder has no learned variance"));
        }
        let raw = self.encode_raw(x)?;
        let (m, ls) = split_mean_log_std(&raw, self.config.latent.c);
        Ok((m, ls.map(num_traits::Float::exp)))
    }

    pub fn denoise_latent(&self, which: LatentModel, z_t: &Tensor, lambda: &[f64]) -> Result<Tensor> {
        let n = self.latent_batch(z_t)?;
        Self::check_lambda(&self.prior_schedule(), lambda, n)?;
        let net = self.latent_net(which)?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval(&mut tape, self.eval_params());
        let zv = ctx.tape.leaf(z_t);
        let out = net.forward(&mut ctx, zv, lambda)?;
        Ok(tape.tensor(out))
    }

    pub fn denoise_prior(&self, z_t: &Tensor, lambda: &[f64]) -> Result<Tensor> {
        self.denoise_latent(LatentModel::Prior, z_t, lambda)
    }

    pub fn denoise_base(&self, z_t: &Tensor, lambda: &[f64]) -> Result<Tensor> {
        self.denoise_latent(LatentModel::Base, z_t, lambda)
    }

    pub fn denoise_decoder(&self, x_t: &Tensor, z0: &Tensor, lambda: &[f64]) -> Result<Tensor> {
        let n = self.image_batch(x_t)?;
        if self.latent_batch(z0)? != n {
            return Err(Error::shape(&[n], &[z0.batch()]));
        }
        Self::check_lambda(&self.config.decoder_schedule, lambda, n)?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval(&mut tape, self.eval_params());
        let xv = ctx.tape.leaf(x_t);
        let zv = ctx.tape.leaf(z0);
        let out = self.decoder.forward(&mut ctx, xv, zv, lambda)?;
        Ok(tape.tensor(out))
    }

    /// Deterministic reconstruction head: the decoder evaluated on a zero
    /// image at the noisiest decoder log-SNR, so the output depends on `z0` only.
    pub fn reconstruct_head(&self, z0: &Tensor) -> Result<Tensor> {
        let n = self.latent_batch(z0)?;
        let [h, w, c] = self.config.image.dims();
        let zero = Tensor::zeros(&[n, h, w, c]);
        self.denoise_decoder(&zero, z0, &vec![self.config.decoder_schedule.lambda_min(); n])
    }

    pub fn latent_view(&self, which: LatentModel) -> LatentView<'_> {
        LatentView { bundle: self, which }
    }

    pub fn decoder_view<'a>(&'a self, z0: &'a Tensor) -> DecoderView<'a> {
        DecoderView { bundle: self, z0 }
    }

    pub(crate) fn add_missing_ema(&mut self) {
        if self.ema.is_none() {
            self.ema = Some(self.params.clone());
        }
    }
}

/// Split `[.., 2c]` into `[.., c]` mean and `[.., c]` log std.
pub fn split_mean_log_std(raw: &Tensor, c: usize) -> (Tensor, Tensor) {
    let rows = raw.len() / (2 * c);
    let mut mean = Vec::with_capacity(rows * c);
    let mut ls = Vec::with_capacity(rows * c);
    for r in raw.data().chunks(2 * c) {
        mean.extend_from_slice(&r[..c]);
        ls.extend_from_slice(&r[c..]);
    }
    let mut shape = raw.shape().to_vec();
    *shape.last_mut().expect("rank") = c;
    (Tensor::new(&shape, mean).expect("sized"), Tensor::new(&shape, ls).expect("sized"))
}

impl Encoder for ModelBundle {
    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        ModelBundle::encode(self, x)
    }
}

#[derive(Clone, Copy)]
pub struct LatentView<'a> {
    bundle: &'a ModelBundle,
    which: LatentModel,
}

impl Denoiser for LatentView<'_> {
    fn denoise(&self, z_t: &Tensor, lambda: &[f64]) -> Result<Tensor> {
        self.bundle.denoise_latent(self.which, z_t, lambda)
    }
}

/// Decoder conditioned on a fixed batch of latents.
#[derive(Clone, Copy)]
pub struct DecoderView<'a> {
    bundle: &'a ModelBundle,
    z0: &'a Tensor,
}

impl Denoiser for DecoderView<'_> {
    fn denoise(&self, x_t: &Tensor, lambda: &[f64]) -> Result<Tensor> {
        self.bundle.denoise_decoder(x_t, self.z0, lambda)
    }
}
