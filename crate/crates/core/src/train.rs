//! Training loops: joint stage-1 training, stage-2 base-model training on a
//! frozen encoder, the single-stage variant, and loss-factor sweeps.
//!
//! Every random draw of step `k` comes from a stream indexed by `k`, so a run
//! is a pure function of its configuration and seed.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::ImageDataset;
use crate::nn::{split_mean_log_std, Ctx, ModelBundle, ModelConfig, Tape};
use crate::objective::{self, DecoderMode, LatentDraws, LossBreakdown, ObjectiveConfig, PriorMode, Stage1Draws};
use crate::optim::{Adam, OptimConfig};
use crate::rng;
use crate::schedule::WeightingConfig;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Encoder, prior and decoder trained jointly.
    One,
    /// Base model trained on latents of a frozen encoder.
    Two,
    /// Encoder, decoder (noise-shifted weighting) and base model in one loop.
    Single,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Stop-gradient into the prior plus a discounted KL to `N(0, I)`.
    pub stop_gradient_prior: bool,
    /// Encoding log-SNR of 10 instead of the configured value.
    pub high_precision_latents: bool,
    /// Encoder predicts a per-dimension standard deviation.
    pub learned_variance: bool,
    /// Deterministic reconstruction head with MSE loss instead of a diffusion decoder.
    pub mse_reconstruction: bool,
    /// Closed-form KL to `N(0, I)` instead of the diffusion prior.
    pub normal_prior: bool,
}

pub const HIGH_PRECISION_LAMBDA_Z0: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
    /// Decoder weighting (stages one and single).
    pub weighting: WeightingConfig,
    /// Base-model weighting in stage two.
    pub base_weighting: WeightingConfig,
    pub ablations: Ablations,
    /// Weight of the `N(0, I)` KL when the prior input is stop-gradient.
    pub normal_kl_weight: f64,
    /// Steps over which the latent terms are ramped linearly from `1/n` to
    /// full weight; `0` trains on the bound from the first step.
    pub prior_warmup_steps: usize,
    /// Amount subtracted from the decoder sigmoid bias in single-stage training.
    pub single_stage_shift: f64,
    /// Required maximum log-SNR of the base schedule, if stated; must equal `λ_z(0)`.
    pub base_lambda_max: Option<f64>,
    pub log_every: usize,
    /// `0` keeps only the initial and final checkpoints.
    pub checkpoint_every: usize,
    /// Cadence of the encoder-spread trace for learned-variance runs.
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::One,
            steps: 1000,
            batch_size: 16,
            optim: OptimConfig::default(),
            seed: 0,
            weighting: WeightingConfig::default(),
            base_weighting: WeightingConfig::new(0.0, 1.0).expect("valid"),
            ablations: Ablations::default(),
            normal_kl_weight: 1e-5,
            prior_warmup_steps: 0,
            single_stage_shift: 2.0,
            base_lambda_max: None,
            log_every: 1,
            checkpoint_every: 0,
            trace_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        self.weighting.validate()?;
        self.base_weighting.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.log_every == 0 || self.trace_every == 0 {
            return Err(Error::config("log_every and trace_every must be positive"));
        }
        let a = &self.ablations;
        if a.stop_gradient_prior && a.normal_prior {
            return Err(Error::config("stop_gradient_prior and normal_prior select different priors"));
        }
        if self.stage == Stage::Two && *a != Ablations::default() {
            return Err(Error::config("ablation flags apply to encoder training, not stage two"));
        }
        if self.stage == Stage::Single && (a.mse_reconstruction || a.normal_prior || a.stop_gradient_prior) {
            return Err(Error::config("single-stage training supports only the diffusion prior and decoder"));
        }
        if !(self.normal_kl_weight >= 0.0 && self.normal_kl_weight.is_finite()) {
            return Err(Error::config("normal_kl_weight must be finite and nonnegative"));
        }
        if !self.single_stage_shift.is_finite() {
            return Err(Error::config("single_stage_shift must be finite"));
        }
        Ok(())
    }

    /// Model configuration with the architecture-level ablations applied.
    pub fn apply_ablations(&self, model: &ModelConfig) -> ModelConfig {
        let mut m = model.clone();
        if self.ablations.high_precision_latents {
            m.latent.lambda_z0 = HIGH_PRECISION_LAMBDA_Z0;
        }
        if self.ablations.learned_variance {
            m.encoder.learned_variance = true;
        }
        m
    }

    /// Latent-term multiplier at 0-based `step`.
    pub fn prior_scale_at(&self, step: usize) -> f64 {
        if step < self.prior_warmup_steps {
            (step + 1) as f64 / self.prior_warmup_steps as f64
        } else {
            1.0
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        let a = &self.ablations;
        let prior_mode = if a.normal_prior {
            PriorMode::Normal
        } else if a.stop_gradient_prior {
            PriorMode::StopGradient { normal_kl_weight: self.normal_kl_weight }
        } else {
            PriorMode::Diffusion
        };
        let decoder_mode = if a.mse_reconstruction { DecoderMode::MseReconstruction } else { DecoderMode::Diffusion };
        ObjectiveConfig { weighting: self.weighting, prior_mode, decoder_mode, prior_scale: 1.0 }
    }
}

/// One optimization step as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub steps: Vec<StepRecord>,
    /// Steps at which checkpoints were emitted (0 is the initialization).
    pub checkpoints: Vec<usize>,
    /// `(step, median encoder std)` for learned-variance runs.
    pub sigma_trace: Vec<(usize, f64)>,
    /// Parameter checksums of the frozen networks before and after stage two.
    pub frozen_checksums: Option<(u64, u64)>,
}

impl RunRecord {
    fn new(train: &TrainConfig, model: &ModelConfig) -> Self {
        Self {
            train: train.clone(),
            model: model.clone(),
            steps: Vec::new(),
            checkpoints: Vec::new(),
            sigma_trace: Vec::new(),
            frozen_checksums: None,
        }
    }

    pub fn loss_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss.total).collect()
    }

    /// Mean total loss over the first and last `k` logged steps.
    pub fn head_tail_means(&self, k: usize) -> Option<(f64, f64)> {
        let t = self.loss_trace();
        if t.is_empty() {
            return None;
        }
        let k = k.clamp(1, t.len());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&t[..k]), mean(&t[t.len() - k..])))
    }
}

/// Hooks for logging and persistence; the default does nothing.
pub trait Observer {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _step: usize, _bundle: &ModelBundle) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;
impl Observer for NoopObserver {}

/// Batch indices for step `k`: consecutive slices of per-epoch permutations.
pub struct BatchPlan {
    seed: u64,
    pool: Vec<usize>,
    batch: usize,
    cache: BTreeMap<usize, Vec<usize>>,
}

impl BatchPlan {
    pub fn new(seed: u64, pool: Vec<usize>, batch: usize) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::config("training pool is empty"));
        }
        Ok(Self { seed, pool, batch, cache: BTreeMap::new() })
    }

    pub fn indices(&mut self, step: usize) -> Vec<usize> {
        let n = self.pool.len();
        let mut out = Vec::with_capacity(self.batch);
        for i in 0..self.batch {
            let pos = step * self.batch + i;
            let epoch = pos / n;
            if !self.cache.contains_key(&epoch) {
                self.cache.retain(|&e, _| e + 1 >= epoch);
                let perm = rng::permutation(&mut rng::stream(self.seed, "epoch", epoch as u64), n);
                self.cache.insert(epoch, perm);
            }
            out.push(self.pool[self.cache[&epoch][pos % n]]);
        }
        out
    }
}

fn latent_tensor(n: usize, dims: [usize; 3], values: Vec<f64>) -> Tensor {
    Tensor::new(&[n, dims[0], dims[1], dims[2]], values).expect("sized")
}

/// Independent draws of stage-1 step `step`, one stream per random quantity.
pub fn stage1_draws(seed: u64, step: usize, n: usize, model: &ModelConfig) -> Stage1Draws {
    let k = step as u64;
    let ld = model.latent.dims();
    let id = model.image.dims();
    let (lm, im) = (model.latent.numel(), model.image.numel());
    Stage1Draws {
        eps_v: latent_tensor(n, ld, rng::normals(&mut rng::stream(seed, "draw.eps_v", k), n * lm)),
        t_prior: rng::stratified_times(&mut rng::stream(seed, "draw.t_prior", k), n),
        eps_prior: latent_tensor(n, ld, rng::normals(&mut rng::stream(seed, "draw.eps_prior", k), n * lm)),
        eps_z: latent_tensor(n, ld, rng::normals(&mut rng::stream(seed, "draw.eps_z", k), n * lm)),
        t_decoder: rng::stratified_times(&mut rng::stream(seed, "draw.t_decoder", k), n),
        eps_decoder: Tensor::new(&[n, id[0], id[1], id[2]], rng::normals(&mut rng::stream(seed, "draw.eps_decoder", k), n * im))
            .expect("sized"),
    }
}

pub fn base_draws(seed: u64, step: usize, n: usize, model: &ModelConfig) -> LatentDraws {
    let k = step as u64;
    LatentDraws {
        t: rng::stratified_times(&mut rng::stream(seed, "draw.t_base", k), n),
        eps: latent_tensor(n, model.latent.dims(), rng::normals(&mut rng::stream(seed, "draw.eps_base", k), n * model.latent.numel())),
    }
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged { step, what: what.to_string() },
        Error::Diverged { what, .. } => Error::Diverged { step, what },
        other => other,
    }
}

fn check_finite(bundle: &ModelBundle, step: usize) -> Result<()> {
    if let Some(name) = bundle.params.first_non_finite() {
        return Err(Error::Diverged { step, what: format!("parameter {name}") });
    }
    Ok(())
}

fn should_checkpoint(cfg: &TrainConfig, step: usize) -> bool {
    cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median encoder standard deviation over a probe batch, using live parameters.
pub fn median_sigma(bundle: &ModelBundle, x: &Tensor) -> Result<f64> {
    let raw = bundle.encode_raw_with(&bundle.params, x)?;
    let (_, log_std) = split_mean_log_std(&raw, bundle.config().latent.c);
    Ok(median(log_std.data().iter().map(|v| v.exp()).collect()))
}

struct Loop<'a, O: Observer> {
    cfg: &'a TrainConfig,
    plan: BatchPlan,
    obs: &'a mut O,
    record: RunRecord,
}

impl<O: Observer> Loop<'_, O> {
    fn log(&mut self, step: usize, lr: f64, grad_norm: f64, loss: LossBreakdown) -> Result<()> {
        if step % self.cfg.log_every == 0 || step + 1 == self.cfg.steps {
            let rec = StepRecord { step, lr, grad_norm, loss };
            self.obs.on_step(&rec)?;
            self.record.steps.push(rec);
        }
        Ok(())
    }
}

fn prepare(bundle: &mut ModelBundle, cfg: &TrainConfig, prefixes: &[&str]) -> Result<Adam> {
    let opt = Adam::new(cfg.optim.clone(), &bundle.params, prefixes)?;
    if cfg.optim.ema_decay > 0.0 {
        bundle.add_missing_ema();
    }
    Ok(opt)
}

fn apply_step(bundle: &mut ModelBundle, opt: &mut Adam, grads: &crate::nn::Grads, step: usize) -> Result<crate::optim::StepInfo> {
    let info = opt.step(&mut bundle.params, grads).map_err(|e| diverged(step, e))?;
    check_finite(bundle, step)?;
    if let Some(ema) = bundle.ema.as_mut() {
        opt.update_ema(ema, &bundle.params);
    }
    bundle.steps_trained += 1;
    Ok(info)
}

fn check_dataset<D: ImageDataset + ?Sized>(bundle: &ModelBundle, data: &D) -> Result<()> {
    if data.image_shape() != bundle.config().image {
        return Err(Error::shape(&bundle.config().image.dims(), &data.image_shape().dims()));
    }
    Ok(())
}

/// Joint training of encoder, prior and decoder.
/// `pool` lists the dataset indices used for training.
pub fn train_stage1<D: ImageDataset + ?Sized, O: Observer>(
    bundle: &mut ModelBundle,
    cfg: &TrainConfig,
    data: &D,
    pool: Vec<usize>,
    obs: &mut O,
) -> Result<RunRecord> {
    cfg.validate()?;
    if cfg.stage != Stage::One {
        return Err(Error::config("train_stage1 needs stage = 1"));
    }
    check_dataset(bundle, data)?;
    check_ablations_match(bundle, cfg)?;
    let obj = cfg.objective();
    let mut prefixes = alloc::vec!["encoder.", "decoder."];
    if obj.prior_mode != PriorMode::Normal {
        prefixes.push("prior.");
    }
    let mut opt = prepare(bundle, cfg, &prefixes)?;
    let mut lp = Loop { cfg, plan: BatchPlan::new(cfg.seed, pool, cfg.batch_size)?, obs, record: RunRecord::new(cfg, bundle.config()) };
    let probe = if bundle.encoder_net().learned_variance() { Some(data.batch(&lp.plan.indices(0))?) } else { None };
    lp.obs.on_checkpoint(0, bundle)?;
    lp.record.checkpoints.push(0);
    for step in 0..cfg.steps {
        if let Some(p) = &probe {
            if step % cfg.trace_every == 0 {
                lp.record.sigma_trace.push((step, median_sigma(bundle, p)?));
            }
        }
        let x = data.batch(&lp.plan.indices(step))?;
        let draws = stage1_draws(cfg.seed, step, x.batch(), bundle.config());
        let mut dropout = rng::stream(cfg.seed, "dropout", step as u64);
        let mut tape = Tape::new();
        let (terms, grads) = {
            let mut ctx = Ctx::train(&mut tape, &bundle.params, &mut dropout);
            let obj = ObjectiveConfig { prior_scale: cfg.prior_scale_at(step), ..obj };
            let terms = objective::stage1_graph(bundle, &mut ctx, &x, &draws, &obj, 0.0).map_err(|e| diverged(step, e))?;
            let grads = tape.backward(terms.loss)?;
            (terms, grads)
        };
        let info = apply_step(bundle, &mut opt, &grads, step)?;
        lp.log(step, info.lr, info.grad_norm, terms.breakdown)?;
        if step > 0 && should_checkpoint(cfg, step) {
            lp.obs.on_checkpoint(step, bundle)?;
            lp.record.checkpoints.push(step);
        }
    }
    if let Some(p) = &probe {
        lp.record.sigma_trace.push((cfg.steps, median_sigma(bundle, p)?));
    }
    if cfg.steps > 0 {
        lp.obs.on_checkpoint(cfg.steps, bundle)?;
        lp.record.checkpoints.push(cfg.steps);
    }
    Ok(lp.record)
}

fn check_ablations_match(bundle: &ModelBundle, cfg: &TrainConfig) -> Result<()> {
    let want = cfg.apply_ablations(bundle.config());
    if want.latent.lambda_z0 != bundle.config().latent.lambda_z0 || want.encoder.learned_variance != bundle.config().encoder.learned_variance {
        return Err(Error::config("bundle was not built with TrainConfig::apply_ablations"));
    }
    Ok(())
}

const FROZEN: [&str; 3] = ["encoder.", "prior.", "decoder."];

fn frozen_checksum(bundle: &ModelBundle) -> u64 {
    let mut h = 0u64;
    for p in FROZEN {
        h = h.rotate_left(21) ^ bundle.params.checksum(p);
        if let Some(e) = &bundle.ema {
            h = h.rotate_left(21) ^ e.checksum(p);
        }
    }
    h
}

/// Base-model training on clean latents of the frozen (evaluation) encoder.
pub fn train_stage2<D: ImageDataset + ?Sized, O: Observer>(
    bundle: &mut ModelBundle,
    cfg: &TrainConfig,
    data: &D,
    pool: Vec<usize>,
    obs: &mut O,
) -> Result<RunRecord> {
    cfg.validate()?;
    if cfg.stage != Stage::Two {
        return Err(Error::config("train_stage2 needs stage = 2"));
    }
    check_dataset(bundle, data)?;
    if bundle.base_net().is_none() {
        return Err(Error::config("bundle has no base model"));
    }
    let lambda_z0 = bundle.config().latent.lambda_z0;
    if bundle.prior_schedule().lambda_max() != lambda_z0 {
        return Err(Error::config("base schedule maximum must equal lambda_z0"));
    }
    if let Some(m) = cfg.base_lambda_max {
        if m != lambda_z0 {
            return Err(Error::config(format!("base lambda max {m} differs from lambda_z0 {lambda_z0}")));
        }
    }
    let mut opt = prepare(bundle, cfg, &["base."])?;
    // after `prepare`, which may add the EMA copy
    let before = frozen_checksum(bundle);
    let mut lp = Loop { cfg, plan: BatchPlan::new(cfg.seed, pool, cfg.batch_size)?, obs, record: RunRecord::new(cfg, bundle.config()) };
    lp.obs.on_checkpoint(0, bundle)?;
    lp.record.checkpoints.push(0);
    for step in 0..cfg.steps {
        let x = data.batch(&lp.plan.indices(step))?;
        let z = bundle.encode(&x)?;
        let draws = base_draws(cfg.seed, step, z.batch(), bundle.config());
        let mut dropout = rng::stream(cfg.seed, "dropout", step as u64);
        let mut tape = Tape::new();
        let (terms, grads) = {
            let mut ctx = Ctx::train(&mut tape, &bundle.params, &mut dropout);
            let terms = objective::base_graph(bundle, &mut ctx, &z, &draws, &cfg.base_weighting).map_err(|e| diverged(step, e))?;
            let grads = tape.backward(terms.loss)?;
            (terms, grads)
        };
        let info = apply_step(bundle, &mut opt, &grads, step)?;
        lp.log(step, info.lr, info.grad_norm, terms.breakdown)?;
        if step > 0 && should_checkpoint(cfg, step) {
            lp.obs.on_checkpoint(step, bundle)?;
            lp.record.checkpoints.push(step);
        }
    }
    let after = frozen_checksum(bundle);
    if before != after {
        return Err(Error::config("frozen networks changed during stage two"));
    }
    lp.record.frozen_checksums = Some((before, after));
    if cfg.steps > 0 {
        lp.obs.on_checkpoint(cfg.steps, bundle)?;
        lp.record.checkpoints.push(cfg.steps);
    }
    Ok(lp.record)
}

/// Encoder, decoder (bias lowered by `single_stage_shift`), prior and base
/// trained in one loop; the base sees stop-gradient latents with the
/// unweighted ELBO.
pub fn train_single_stage<D: ImageDataset + ?Sized, O: Observer>(
    bundle: &mut ModelBundle,
    cfg: &TrainConfig,
    data: &D,
    pool: Vec<usize>,
    obs: &mut O,
) -> Result<RunRecord> {
    cfg.validate()?;
    if cfg.stage != Stage::Single {
        return Err(Error::config("train_single_stage needs stage = single"));
    }
    check_dataset(bundle, data)?;
    check_ablations_match(bundle, cfg)?;
    if bundle.base_net().is_none() {
        return Err(Error::config("bundle has no base model"));
    }
    let obj = cfg.objective();
    let mut opt = prepare(bundle, cfg, &["encoder.", "decoder.", "prior.", "base."])?;
    let mut lp = Loop { cfg, plan: BatchPlan::new(cfg.seed, pool, cfg.batch_size)?, obs, record: RunRecord::new(cfg, bundle.config()) };
    lp.obs.on_checkpoint(0, bundle)?;
    lp.record.checkpoints.push(0);
    for step in 0..cfg.steps {
        let x = data.batch(&lp.plan.indices(step))?;
        let n = x.batch();
        let draws = stage1_draws(cfg.seed, step, n, bundle.config());
        let bdraws = base_draws(cfg.seed, step, n, bundle.config());
        let mut dropout = rng::stream(cfg.seed, "dropout", step as u64);
        let mut tape = Tape::new();
        let (breakdown, grads) = {
            let mut ctx = Ctx::train(&mut tape, &bundle.params, &mut dropout);
            let run = |ctx: &mut Ctx<'_>| -> Result<_> {
                let obj = ObjectiveConfig { prior_scale: cfg.prior_scale_at(step), ..obj };
                let s1 = objective::stage1_graph(bundle, ctx, &x, &draws, &obj, cfg.single_stage_shift)?;
                let z = ctx.tape.tensor(s1.z_clean.expect("stage-1 graph encodes"));
                let b = objective::base_graph(bundle, ctx, &z, &bdraws, &WeightingConfig::unweighted())?;
                let loss = ctx.tape.add(s1.loss, b.loss)?;
                let mut bd = s1.breakdown;
                bd.auxiliary_term += b.breakdown.total;
                bd.total += b.breakdown.total;
                for (p, q) in bd.per_sample.iter_mut().zip(&b.breakdown.per_sample) {
                    *p += q;
                }
                Ok((loss, bd))
            };
            let (loss, bd) = run(&mut ctx).map_err(|e| diverged(step, e))?;
            (bd, tape.backward(loss)?)
        };
        let info = apply_step(bundle, &mut opt, &grads, step)?;
        lp.log(step, info.lr, info.grad_norm, breakdown)?;
        if step > 0 && should_checkpoint(cfg, step) {
            lp.obs.on_checkpoint(step, bundle)?;
            lp.record.checkpoints.push(step);
        }
    }
    if cfg.steps > 0 {
        lp.obs.on_checkpoint(cfg.steps, bundle)?;
        lp.record.checkpoints.push(cfg.steps);
    }
    Ok(lp.record)
}

/// Dispatch on `cfg.stage`.
pub fn train<D: ImageDataset + ?Sized, O: Observer>(
    bundle: &mut ModelBundle,
    cfg: &TrainConfig,
    data: &D,
    pool: Vec<usize>,
    obs: &mut O,
) -> Result<RunRecord> {
    match cfg.stage {
        Stage::One => train_stage1(bundle, cfg, data, pool, obs),
        Stage::Two => train_stage2(bundle, cfg, data, pool, obs),
        Stage::Single => train_single_stage(bundle, cfg, data, pool, obs),
    }
}

/// The swept quantity of a sweep row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LossFactor,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow<T> {
    pub weighting: WeightingConfig,
    pub outcome: core::result::Result<T, String>,
}

/// Train one stage-1 model per weighting and evaluate it; rows are sorted by
/// the swept axis. Failures are kept per row and the sweep continues.
pub fn sweep<D, T, F>(
    model: &ModelConfig,
    base: &TrainConfig,
    axis: SweepAxis,
    values: &[f64],
    data: &D,
    pool: &[usize],
    mut evaluate: F,
) -> Result<Vec<SweepRow<T>>>
where
    D: ImageDataset + ?Sized,
    F: FnMut(&ModelBundle, &RunRecord) -> Result<T>,
{
    base.validate()?;
    let mut vals = values.to_vec();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite sweep values"));
    let mut rows = Vec::with_capacity(vals.len());
    for v in vals {
        let mut cfg = base.clone();
        match axis {
            SweepAxis::LossFactor => cfg.weighting.loss_factor = v,
            SweepAxis::Bias => cfg.weighting.bias = v,
        }
        let mut run = || -> Result<T> {
            let mut bundle = ModelBundle::new(cfg.apply_ablations(model), cfg.seed)?;
            let rec = train(&mut bundle, &cfg, data, pool.to_vec(), &mut NoopObserver)?;
            evaluate(&bundle, &rec)
        };
        let outcome = run().map_err(|e| e.to_string());
        rows.push(SweepRow { weighting: cfg.weighting, outcome });
    }
    Ok(rows)
}
