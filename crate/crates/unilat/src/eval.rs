//! Evaluation of trained bundles: bitrate, PSNR and rFID on held-out images.

use serde::{Deserialize, Serialize};
use unilat_core::data::{split, Family, ImageDataset, GLYPH_COUNT};
use unilat_core::metrics::{
    self, BitrateReport, ClassifierFeatures, Estimate, FeatureExtractor, RandomFeatures, RfidReport, FEATURE_SEED, IMAGE_PEAK,
};
use unilat_core::nn::{LatentModel, ModelBundle};
use unilat_core::objective::noise_latent;
use unilat_core::{rng, Tensor};

use crate::config::{FeatureKind, RunConfig};
use crate::error::Result;

/// Train and evaluation indices of a dataset of `len` images.
pub fn pools(cfg: &RunConfig, len: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    Ok(split(len, cfg.eval.eval_fraction, cfg.data.seed)?)
}

fn label_classes(cfg: &RunConfig) -> Option<usize> {
    match cfg.data.family {
        Family::Blobs { modes } => Some(modes),
        Family::Sprites { .. } => Some(GLYPH_COUNT),
        _ => None,
    }
}

/// The configured feature map; falls back to random features for unlabelled data.
pub fn feature_extractor<D: ImageDataset + ?Sized>(cfg: &RunConfig, data: &D, train_pool: &[usize]) -> Result<Box<dyn FeatureExtractor>> {
    let classes = label_classes(cfg).filter(|_| !train_pool.is_empty() && data.label(train_pool[0]).is_some());
    match (cfg.eval.features, classes) {
        (FeatureKind::Classifier, Some(c)) => {
            Ok(Box::new(ClassifierFeatures::train(data, train_pool, c, cfg.eval.classifier_steps, FEATURE_SEED)?))
        }
        (FeatureKind::Classifier, None) => {
            log::warn!("dataset has no labels; using random features for rFID");
            Ok(Box::new(RandomFeatures::new(data.image_shape(), cfg.eval.feature_dim, FEATURE_SEED)))
        }
        (FeatureKind::Random, _) => Ok(Box::new(RandomFeatures::new(data.image_shape(), cfg.eval.feature_dim, FEATURE_SEED))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Measured with the prior, or absent when the prior is not a diffusion model.
    pub bitrate: Option<BitrateReport>,
    /// Measured with the base model when one has been trained.
    pub base_bitrate: Option<BitrateReport>,
    pub psnr: Estimate,
    pub rfid: RfidReport,
}

/// Reconstructions of `x`: the diffusion decoder, or the deterministic head
/// for runs trained with an MSE reconstruction loss.
pub fn reconstructions(bundle: &ModelBundle, cfg: &RunConfig, x: &Tensor) -> Result<Tensor> {
    if cfg.train.ablations.mse_reconstruction {
        let z = bundle.encode(x)?;
        let noise = Tensor::new(z.shape(), rng::normals(&mut rng::rng_for(cfg.sampler.seed, "sampler.encode_noise"), z.len()))?;
        let z0 = noise_latent(&z, bundle.config().latent.lambda_z0, &noise)?;
        return Ok(bundle.reconstruct_head(&z0)?.clamp(-1.0, 1.0));
    }
    Ok(unilat_core::sampler::reconstruct(bundle, x, &cfg.sampler)?)
}

/// Evaluate on the first `cfg.eval.images` indices of `eval_pool`.
pub fn evaluate<D: ImageDataset + ?Sized>(
    bundle: &ModelBundle,
    cfg: &RunConfig,
    data: &D,
    eval_pool: &[usize],
    features: &dyn FeatureExtractor,
    base_trained: bool,
) -> Result<Evaluation> {
    let idx = &eval_pool[..cfg.eval.images.min(eval_pool.len())];
    let e = &cfg.eval;
    let bitrate = if cfg.train.ablations.normal_prior {
        None
    } else {
        Some(metrics::estimate_bitrate(bundle, LatentModel::Prior, data, idx, e.n_mc, e.seed)?)
    };
    let base_bitrate = if base_trained && bundle.base_net().is_some() {
        Some(metrics::estimate_bitrate(bundle, LatentModel::Base, data, idx, e.n_mc, e.seed)?)
    } else {
        None
    };
    let x = data.batch(idx)?;
    let xr = reconstructions(bundle, cfg, &x)?;
    let psnr = metrics::mean_psnr(&x, &xr, IMAGE_PEAK)?;
    let rfid = metrics::rfid(features, &x, &xr, e.bootstrap, e.seed)?;
    Ok(Evaluation { bitrate, base_bitrate, psnr, rfid })
}
