//! Subcommand implementations. Each returns the text printed on success.

use std::path::{Path, PathBuf};

use serde::Serialize;
use unilat_core::data::{self, DatasetSpec, Family, ImageDataset};
use unilat_core::metrics;
use unilat_core::nn::{LatentModel, ModelBundle};
use unilat_core::sampler::{self, SamplerConfig};
use unilat_core::train::{self, Ablations, Stage, SweepAxis};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{self, Evaluation};
use crate::images;
use crate::rundir::{self, RunDir, RunFile, RunObserver};

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Replaces the training, sampling and evaluation seeds.
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    /// Flags that are set here are switched on; the others keep the config value.
    pub ablations: Ablations,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.sampler.seed = s;
            cfg.eval.seed = s;
        }
        if let Some(n) = self.steps {
            cfg.train.steps = n;
        }
        let (a, o) = (&mut cfg.train.ablations, &self.ablations);
        a.stop_gradient_prior |= o.stop_gradient_prior;
        a.high_precision_latents |= o.high_precision_latents;
        a.learned_variance |= o.learned_variance;
        a.mse_reconstruction |= o.mse_reconstruction;
        a.normal_prior |= o.normal_prior;
    }
}

/// The dataset a spec describes: generated, or read from a folder.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Box<dyn ImageDataset>> {
    match &spec.family {
        Family::Folder { path } => {
            if spec.height != spec.width {
                return Err(Error::Usage("folder datasets are square: set data.height = data.width".into()));
            }
            let ing = images::ingest_folder(Path::new(path), spec.height, spec.channels)?;
            Ok(Box::new(ing.dataset))
        }
        _ => Ok(Box::new(data::generate(spec)?)),
    }
}

fn load_config(path: &Path, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    ov.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Artifacts a run command may create; `--overwrite` removes exactly these.
const RUN_ARTIFACTS: [&str; 8] =
    [rundir::CONFIG, rundir::LOG, rundir::RECORD, rundir::METRICS, rundir::CHECKPOINTS, rundir::SAMPLES, SWEEP_CSV, SWEEP_DIR];

fn clear_artifacts(root: &Path) -> Result<()> {
    for name in RUN_ARTIFACTS {
        let p = root.join(name);
        if p.is_dir() {
            std::fs::remove_dir_all(&p).map_err(Error::io(&p))?;
        } else if p.exists() {
            std::fs::remove_file(&p).map_err(Error::io(&p))?;
        }
    }
    Ok(())
}

fn fresh_run(root: &Path, overwrite: bool) -> Result<Option<RunDir>> {
    if RunDir::is_complete(root) && !overwrite {
        return Ok(None);
    }
    clear_artifacts(root)?;
    Ok(Some(RunDir::create(root, false)?))
}

fn exists_message(root: &Path) -> String {
    format!("{} already holds a finished run; pass --overwrite to replace it", root.display())
}

fn summary_line(file: &RunFile) -> String {
    let mut s = String::new();
    if let Some(last) = file.record.steps.last() {
        let l = &last.loss;
        s += &format!(
            "step {} loss {:.6} prior {:.6} endpoint_kl {:.6} decoder {:.6} aux {:.6}\n",
            last.step + 1,
            l.total,
            l.prior_mse_term,
            l.endpoint_kl,
            l.decoder_term,
            l.auxiliary_term
        );
    } else {
        s += "no training steps\n";
    }
    if let Some(b) = &file.bitrate {
        s += &format!(
            "bitrate {:.4} nats, {:.5} bits/dim, {:.5} ± {:.5} bits/pixel{}\n",
            b.nats_total,
            b.bits_per_dim,
            b.bits_per_pixel,
            b.se_bits_per_pixel(),
            if b.flagged { " (untrained)" } else { "" }
        );
    }
    s
}

fn run_training(dir: &RunDir, cfg: &RunConfig, mut bundle: ModelBundle, parent: Option<PathBuf>) -> Result<String> {
    cfg.save(&dir.path(rundir::CONFIG))?;
    let data = load_dataset(&cfg.data)?;
    let (train_pool, eval_pool) = eval::pools(cfg, data.len())?;
    let mut obs = RunObserver::new(dir, &cfg.train)?;
    let record = train::train(&mut bundle, &cfg.train, data.as_ref(), train_pool, &mut obs)?;
    obs.finish()?;
    let which = if cfg.train.stage == Stage::One { LatentModel::Prior } else { LatentModel::Base };
    let bitrate = if cfg.train.ablations.normal_prior || eval_pool.is_empty() {
        None
    } else {
        let idx = &eval_pool[..cfg.eval.images.min(eval_pool.len())];
        Some(metrics::estimate_bitrate(&bundle, which, data.as_ref(), idx, cfg.eval.n_mc, cfg.eval.seed)?)
    };
    let file = RunFile { record, bitrate, parent };
    dir.write_run_file(&file)?;
    Ok(summary_line(&file))
}

pub fn train_ae(config: &Path, root: &Path, ov: &Overrides, overwrite: bool) -> Result<String> {
    train_fresh(config, root, ov, overwrite, Stage::One)
}

pub fn train_single(config: &Path, root: &Path, ov: &Overrides, overwrite: bool) -> Result<String> {
    train_fresh(config, root, ov, overwrite, Stage::Single)
}

fn train_fresh(config: &Path, root: &Path, ov: &Overrides, overwrite: bool, stage: Stage) -> Result<String> {
    let mut cfg = load_config(config, ov)?;
    cfg.train.stage = stage;
    cfg.train.validate()?;
    let Some(dir) = fresh_run(root, overwrite)? else {
        return Ok(exists_message(root));
    };
    let bundle = ModelBundle::new(cfg.train.apply_ablations(&cfg.model), cfg.train.seed)?;
    // the stored model config is the one actually built
    cfg.model = bundle.config().clone();
    run_training(&dir, &cfg, bundle, None)
}

/// Stage two on the latest checkpoint of `ae_root`. Data and model come from
/// the stage-one run; the training section comes from `config`, or from the
/// stage-one config when none is given.
pub fn train_base(ae_root: &Path, config: Option<&Path>, root: &Path, ov: &Overrides, overwrite: bool) -> Result<String> {
    let ae = RunDir::open(ae_root)?;
    let ae_cfg = ae.config()?;
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => ae_cfg.clone(),
    };
    ov.apply(&mut cfg);
    cfg.train.stage = Stage::Two;
    cfg.train.ablations = Ablations::default();
    let (bundle, _) = ae.load_latest()?;
    cfg.data = ae_cfg.data;
    cfg.model = bundle.config().clone();
    cfg.validate()?;
    let lz0 = cfg.model.latent.lambda_z0;
    if let Some(m) = cfg.train.base_lambda_max {
        if m != lz0 {
            return Err(Error::Usage(format!("train.base_lambda_max = {m} differs from the encoder's lambda_z0 = {lz0}")));
        }
    }
    let Some(dir) = fresh_run(root, overwrite)? else {
        return Ok(exists_message(root));
    };
    run_training(&dir, &cfg, bundle, Some(ae_root.to_path_buf()))
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    kind: &'a str,
    checkpoint: String,
    latent_model: Option<LatentModel>,
    sampler: SamplerConfig,
    files: Vec<String>,
}

fn checkpoint_id(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("unknown").to_string()
}

fn write_images(dir: &Path, prefix: &str, x: &unilat_core::Tensor, shape: unilat_core::nn::ImageShape) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut files = Vec::new();
    for k in 0..x.batch() {
        let name = format!("{prefix}{k:05}.png");
        images::write_png(&dir.join(&name), x.sample(k), shape)?;
        files.push(name);
    }
    Ok(files)
}

/// Which latent model a run's samples come from by default.
fn default_latent_model(dir: &RunDir) -> Result<LatentModel> {
    let stage = dir.run_file()?.record.train.stage;
    Ok(if stage == Stage::One { LatentModel::Prior } else { LatentModel::Base })
}

pub fn sample(root: &Path, n: Option<usize>, seed: Option<u64>, force_prior: bool, overwrite: bool) -> Result<String> {
    let dir = RunDir::open(root)?;
    let out = dir.path(rundir::SAMPLES).join("generated");
    if out.join("manifest.json").exists() && !overwrite {
        return Ok(format!("{} exists; pass --overwrite to regenerate", out.display()));
    }
    let cfg = dir.config()?;
    let ck = dir.latest_checkpoint()?;
    let (bundle, _) = crate::checkpoint::load(&ck)?;
    let which = if force_prior { LatentModel::Prior } else { default_latent_model(&dir)? };
    let mut sc = cfg.sampler;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let n = n.unwrap_or(cfg.eval.samples);
    let x = sampler::generate(&bundle, which, &bundle, n, &sc)?;
    let files = write_images(&out, "sample-", &x, bundle.config().image)?;
    let m = Manifest { kind: "generated", checkpoint: checkpoint_id(&ck), latent_model: Some(which), sampler: sc, files };
    rundir::write_json(&out.join("manifest.json"), &m)?;
    Ok(format!("wrote {n} samples to {}", out.display()))
}

pub fn reconstruct(root: &Path, n: Option<usize>, overwrite: bool) -> Result<String> {
    let dir = RunDir::open(root)?;
    let out = dir.path(rundir::SAMPLES).join("reconstructions");
    if out.join("manifest.json").exists() && !overwrite {
        return Ok(format!("{} exists; pass --overwrite to regenerate", out.display()));
    }
    let cfg = dir.config()?;
    let ck = dir.latest_checkpoint()?;
    let (bundle, _) = crate::checkpoint::load(&ck)?;
    let data = load_dataset(&cfg.data)?;
    let (_, eval_pool) = eval::pools(&cfg, data.len())?;
    let idx = &eval_pool[..n.unwrap_or(cfg.eval.samples).min(eval_pool.len())];
    let x = data.batch(idx)?;
    let xr = eval::reconstructions(&bundle, &cfg, &x)?;
    let shape = bundle.config().image;
    let mut files = write_images(&out, "original-", &x, shape)?;
    files.extend(write_images(&out, "reconstruction-", &xr, shape)?);
    let m = Manifest { kind: "reconstructions", checkpoint: checkpoint_id(&ck), latent_model: None, sampler: cfg.sampler, files };
    rundir::write_json(&out.join("manifest.json"), &m)?;
    Ok(format!("wrote {} reconstructions to {}", idx.len(), out.display()))
}

#[derive(Debug, Serialize)]
struct MetricRow<'a> {
    metric: &'a str,
    value: f64,
    std_error: f64,
    n: usize,
    seed: u64,
    checkpoint: &'a str,
}

fn metric_rows<'a>(ev: &Evaluation, seed: u64, checkpoint: &'a str) -> Vec<MetricRow<'a>> {
    let row = |metric, value, std_error, n| MetricRow { metric, value, std_error, n, seed, checkpoint };
    let mut rows = vec![row("psnr", ev.psnr.mean, ev.psnr.std_error, ev.psnr.n), row("rfid", ev.rfid.value, ev.rfid.std_error, ev.rfid.n)];
    for (prefix, b) in [("", &ev.bitrate), ("base_", &ev.base_bitrate)] {
        if let Some(b) = b {
            let name = |s: &'static str| -> &'static str {
                match (prefix, s) {
                    ("", "bpp") => "bits_per_pixel",
                    ("", "bpd") => "bits_per_dim",
                    ("", _) => "latent_nats",
                    (_, "bpp") => "base_bits_per_pixel",
                    (_, "bpd") => "base_bits_per_dim",
                    _ => "base_latent_nats",
                }
            };
            rows.push(row(name("bpp"), b.bits_per_pixel, b.se_bits_per_pixel(), b.n_mc));
            rows.push(row(name("bpd"), b.bits_per_dim, b.se_bits_per_dim(), b.n_mc));
            rows.push(row(name("nats"), b.nats_total, b.std_error, b.n_mc));
        }
    }
    rows
}

pub fn eval(root: &Path, overwrite: bool) -> Result<String> {
    let dir = RunDir::open(root)?;
    let out = dir.path(rundir::METRICS);
    if out.exists() && !overwrite {
        return Ok(format!("{} exists; pass --overwrite to recompute", out.display()));
    }
    let cfg = dir.config()?;
    let ck = dir.latest_checkpoint()?;
    let (bundle, _) = crate::checkpoint::load(&ck)?;
    let data = load_dataset(&cfg.data)?;
    let (train_pool, eval_pool) = eval::pools(&cfg, data.len())?;
    let features = eval::feature_extractor(&cfg, data.as_ref(), &train_pool)?;
    let base_trained = default_latent_model(&dir)? == LatentModel::Base;
    let ev = eval::evaluate(&bundle, &cfg, data.as_ref(), &eval_pool, features.as_ref(), base_trained)?;
    let id = checkpoint_id(&ck);
    let mut w = csv::Writer::from_path(&out)?;
    let mut text = String::new();
    for r in metric_rows(&ev, cfg.eval.seed, &id) {
        text += &format!("{} {:.6} ± {:.6}\n", r.metric, r.value, r.std_error);
        w.serialize(r)?;
    }
    w.flush().map_err(Error::io(&out))?;
    Ok(text)
}

pub const SWEEP_CSV: &str = "sweep.csv";
const SWEEP_DIR: &str = "sweep";

#[derive(Debug, Serialize)]
struct SweepCsvRow {
    axis: SweepAxis,
    value: f64,
    bits_per_pixel: Option<f64>,
    bits_per_pixel_se: Option<f64>,
    bits_per_dim: Option<f64>,
    psnr: Option<f64>,
    psnr_se: Option<f64>,
    rfid: Option<f64>,
    rfid_se: Option<f64>,
    error: String,
}

/// Train one stage-one model per swept value and tabulate the evaluations.
pub fn sweep(config: &Path, root: &Path, ov: &Overrides, overwrite: bool) -> Result<String> {
    let mut cfg = load_config(config, ov)?;
    cfg.train.stage = Stage::One;
    let out = root.join(SWEEP_CSV);
    if out.exists() && !overwrite {
        return Ok(format!("{} exists; pass --overwrite to rerun", out.display()));
    }
    std::fs::create_dir_all(root).map_err(Error::io(root))?;
    cfg.save(&root.join(rundir::CONFIG))?;
    let data = load_dataset(&cfg.data)?;
    let (train_pool, eval_pool) = eval::pools(&cfg, data.len())?;
    let features = eval::feature_extractor(&cfg, data.as_ref(), &train_pool)?;
    let rows = train::sweep(&cfg.model, &cfg.train, cfg.sweep.axis, &cfg.sweep.values, data.as_ref(), &train_pool, |bundle, _| {
        eval::evaluate(bundle, &cfg, data.as_ref(), &eval_pool, features.as_ref(), false)
            .map_err(|e| unilat_core::Error::Unsupported(e.to_string()))
    })?;
    let mut w = csv::Writer::from_path(&out)?;
    let mut text = String::new();
    for r in rows {
        let value = match cfg.sweep.axis {
            SweepAxis::LossFactor => r.weighting.loss_factor,
            SweepAxis::Bias => r.weighting.bias,
        };
        let row = match r.outcome {
            Ok(ev) => {
                let b = ev.bitrate.as_ref();
                text += &format!(
                    "{value}: {:.5} bits/pixel, PSNR {:.3}, rFID {:.5}\n",
                    b.map_or(f64::NAN, |b| b.bits_per_pixel),
                    ev.psnr.mean,
                    ev.rfid.value
                );
                SweepCsvRow {
                    axis: cfg.sweep.axis,
                    value,
                    bits_per_pixel: b.map(|b| b.bits_per_pixel),
                    bits_per_pixel_se: b.map(|b| b.se_bits_per_pixel()),
                    bits_per_dim: b.map(|b| b.bits_per_dim),
                    psnr: Some(ev.psnr.mean),
                    psnr_se: Some(ev.psnr.std_error),
                    rfid: Some(ev.rfid.value),
                    rfid_se: Some(ev.rfid.std_error),
                    error: String::new(),
                }
            }
            Err(e) => {
                text += &format!("{value}: failed: {e}\n");
                SweepCsvRow {
                    axis: cfg.sweep.axis,
                    value,
                    bits_per_pixel: None,
                    bits_per_pixel_se: None,
                    bits_per_dim: None,
                    psnr: None,
                    psnr_se: None,
                    rfid: None,
                    rfid_se: None,
                    error: e,
                }
            }
        };
        w.serialize(row)?;
    }
    w.flush().map_err(Error::io(&out))?;
    Ok(text)
}

/// Parameter and FLOP table of the configured model.
pub fn flops(config: Option<&Path>) -> Result<String> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cost = metrics::model_cost(&cfg.model)?;
    let mut text = format!("{:<8} {:>10} {:>16} {:>16}\n", "network", "params", "inference_flops", "training_flops");
    let nets = [("encoder", Some(cost.encoder)), ("prior", Some(cost.prior)), ("decoder", Some(cost.decoder)), ("base", cost.base)];
    for (name, c) in nets {
        if let Some(c) = c {
            debug_assert_eq!(c.training_flops, 3 * c.inference_flops);
            text += &format!("{name:<8} {:>10} {:>16} {:>16}\n", c.params, c.inference_flops, c.training_flops);
        }
    }
    Ok(text)
}

pub fn export_dataset(config: &Path, out: &Path, count: Option<usize>, overwrite: bool) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    if out.join("manifest.json").exists() && !overwrite {
        return Ok(format!("{} exists; pass --overwrite to rewrite it", out.display()));
    }
    let data = load_dataset(&cfg.data)?;
    let n = count.unwrap_or(data.len()).min(data.len());
    let subset = data::InMemoryDataset::from_dataset(data.as_ref(), &(0..n).collect::<Vec<_>>())?;
    let files = images::export_dataset(&subset, out, "image-")?;
    let names: Vec<String> = files.iter().filter_map(|p| p.file_name()?.to_str().map(String::from)).collect();
    rundir::write_json(&out.join("manifest.json"), &serde_json::json!({ "data": cfg.data, "files": names }))?;
    Ok(format!("wrote {n} images to {}", out.display()))
}

pub fn init_config(out: &Path, smoke: bool, overwrite: bool) -> Result<String> {
    if out.exists() && !overwrite {
        return Ok(format!("{} exists; pass --overwrite to replace it", out.display()));
    }
    let cfg = if smoke { RunConfig::smoke() } else { RunConfig::default() };
    cfg.save(out)?;
    Ok(format!("wrote {}", out.display()))
}
