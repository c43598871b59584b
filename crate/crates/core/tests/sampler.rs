//! Reverse-chain behaviour against analytic Gaussian answers.

use unilat_core::metrics::{wasserstein1_to_normal, Estimate};
use unilat_core::nn::{LatentModel, ModelBundle, ModelConfig};
use unilat_core::rng;
use unilat_core::sampler::{decode, generate, run_chain, sample_latent, transition, SamplerConfig, SamplerKind};
use unilat_core::toy::{GaussianDenoiser, ZeroDenoiser};
use unilat_core::{alpha_sigma, Tensor};

fn variance_estimate(xs: &[f64]) -> (f64, f64) {
    let sq: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let e = Estimate::from_samples(&sq);
    (e.mean, e.std_error)
}

#[test]
fn ancestral_chain_converges_to_the_gaussian_marginal() {
    let var = 0.5;
    let model = GaussianDenoiser { var };
    let s = alpha_sigma(5.0).unwrap();
    let target_std = (s.alpha * s.alpha * var + s.sigma * s.sigma).sqrt();
    let mut dists = Vec::new();
    for steps in [8, 32, 128] {
        let cfg = SamplerConfig { steps, ..Default::default() };
        let mut r = rng::rng_for(1, "chain");
        let out = run_chain(&model, -15.0, 5.0, &[1], 20_000, &cfg, &mut r).unwrap();
        dists.push(wasserstein1_to_normal(out.state.data(), 0.0, target_std));
    }
    assert!(dists[0] > dists[1] && dists[1] > dists[2], "{dists:?}");
    assert!(dists[2] < 0.05, "{dists:?}");
}

/// Per-step variance map of the ancestral chain driven by a zero predictor.
fn zero_chain_variance(lmin: f64, lmax: f64, steps: usize) -> f64 {
    let grid = unilat_core::sampler::lambda_grid(lmin, lmax, steps);
    let mut v = 1.0;
    for w in grid.windows(2) {
        let (n, c) = (alpha_sigma(w[0]).unwrap(), alpha_sigma(w[1]).unwrap());
        let r = (w[0] - w[1]).exp();
        let a = r * c.alpha / n.alpha;
        v = a * a * v + c.sigma * c.sigma * (1.0 - r);
    }
    v
}

#[test]
fn zero_model_chain_follows_the_variance_recursion() {
    let mut b = ModelBundle::new(ModelConfig::default(), 4).unwrap();
    b.params.get_mut(b.params.find("prior.gate").unwrap()).data_mut()[0] = 0.0;
    let cfg = SamplerConfig { chunk: 256, ..Default::default() };
    let z0 = sample_latent(&b, LatentModel::Prior, 1024, &cfg).unwrap();
    let (v, se) = variance_estimate(z0.data());
    let exact = zero_chain_variance(-15.0, 5.0, 128);
    assert!((v - exact).abs() < 3.0 * se, "{v} ± {se} vs {exact}");
    // the recursion keeps the chain's variance at σ²(λ), ending at σ²(λ_z0)
    assert!((exact - alpha_sigma(5.0).unwrap().sigma.powi(2)).abs() < 1e-6);

    let mut r = rng::rng_for(5, "zero");
    let out = run_chain(&ZeroDenoiser, -15.0, 5.0, &[1], 100_000, &SamplerConfig::default(), &mut r).unwrap();
    let (v, se) = variance_estimate(out.state.data());
    assert!((v - exact).abs() < 3.0 * se);
}

#[test]
fn single_step_chain_is_one_posterior_step() {
    let model = GaussianDenoiser { var: 1.0 };
    let cfg = SamplerConfig { steps: 1, ..Default::default() };
    let mut r = rng::rng_for(7, "one");
    let out = run_chain(&model, -15.0, 5.0, &[3], 4, &cfg, &mut r).unwrap();

    let mut r = rng::rng_for(7, "one");
    let z1 = Tensor::new(&[4, 3], rng::normals(&mut r, 12)).unwrap();
    use unilat_core::model::Denoiser;
    let pred = model.denoise(&z1, &[-15.0; 4]).unwrap();
    let noise = Tensor::new(&[4, 3], rng::normals(&mut r, 12)).unwrap();
    let manual = transition(&z1, &pred, -15.0, 5.0, SamplerKind::Ancestral, 1.0, &noise).unwrap();
    assert_eq!(out.state, manual);
    assert_eq!(out.prediction, pred);
}

#[test]
fn deterministic_chain_recovers_gaussian_spread() {
    let var = 0.5;
    let cfg = SamplerConfig { steps: 256, kind: SamplerKind::Deterministic, ..Default::default() };
    let mut r = rng::rng_for(8, "ddim");
    let out = run_chain(&GaussianDenoiser { var }, -15.0, 5.0, &[1], 10_000, &cfg, &mut r).unwrap();
    let s = alpha_sigma(5.0).unwrap();
    let target = (s.alpha * s.alpha * var + s.sigma * s.sigma).sqrt();
    assert!(wasserstein1_to_normal(out.state.data(), 0.0, target) < 0.05);
}

/// Denoiser that records every log-SNR it is queried at.
struct Recorder(std::cell::RefCell<Vec<f64>>);

impl unilat_core::model::Denoiser for Recorder {
    fn denoise(&self, z_t: &Tensor, lambda: &[f64]) -> unilat_core::Result<Tensor> {
        self.0.borrow_mut().extend_from_slice(lambda);
        Ok(Tensor::zeros(z_t.shape()))
    }
}

#[test]
fn model_is_never_queried_outside_its_range() {
    let rec = Recorder(Default::default());
    let mut r = rng::rng_for(1, "range");
    run_chain(&rec, -15.0, 5.0, &[2], 3, &SamplerConfig { steps: 17, ..Default::default() }, &mut r).unwrap();
    let seen = rec.0.into_inner();
    assert_eq!(seen.len(), 17 * 3);
    assert!(seen.iter().all(|&l| (-15.0..5.0).contains(&l)));
}

fn bundle() -> ModelBundle {
    // perturb the zero-initialized heads so the networks are not trivial
    let mut b = ModelBundle::new(ModelConfig::default(), 2).unwrap();
    let mut r = rng::rng_for(3, "heads");
    for name in ["decoder.head.w", "prior.head.w", "base.head.w"] {
        let id = b.params.find(name).unwrap();
        for v in b.params.get_mut(id).data_mut() {
            *v = 0.05 * rng::normal(&mut r);
        }
    }
    b.steps_trained = 1;
    b
}

#[test]
fn generation_contracts() {
    let b = bundle();
    let cfg = SamplerConfig { steps: 8, seed: 3, ..Default::default() };
    let empty = generate(&b, LatentModel::Base, &b, 0, &cfg).unwrap();
    assert_eq!(empty.shape(), &[0, 16, 16, 1]);
    let x = generate(&b, LatentModel::Base, &b, 5, &cfg).unwrap();
    assert_eq!(x.shape(), &[5, 16, 16, 1]);
    assert!(x.data().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
    assert_eq!(x, generate(&b, LatentModel::Base, &b, 5, &cfg).unwrap());

    let z0 = sample_latent(&b, LatentModel::Prior, 2, &cfg).unwrap();
    assert_eq!(z0.shape(), &[2, 4, 4, 4]);
    let a = decode(&b, &z0, &cfg).unwrap();
    let c = decode(&b, &z0, &SamplerConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn broken_checkpoints_are_rejected() {
    let mut b = bundle();
    let id = b.params.find("prior.head.w").unwrap();
    b.params.get_mut(id).data_mut()[0] = f64::NAN;
    b.ema = None;
    assert!(sample_latent(&b, LatentModel::Prior, 1, &SamplerConfig::default()).is_err());
    assert!(decode(&bundle(), &Tensor::zeros(&[1, 2, 2, 4]), &SamplerConfig::default()).is_err());
    assert!(SamplerConfig { steps: 0, ..Default::default() }.validate().is_err());
}
