//! Finite-difference check of the full stage-1 loss gradient.

use unilat_core::nn::layers::Ctx;
use unilat_core::nn::{DenoiserConfig, EncoderConfig, ImageShape, LatentSpec, ModelBundle, ModelConfig, ParamStore, Tape};
use unilat_core::objective::{stage1_graph, DecoderMode, ObjectiveConfig, PriorMode};
use unilat_core::rng;
use unilat_core::train::stage1_draws;
use unilat_core::{NoiseSchedule, Tensor, WeightingConfig};

fn tiny_config(learned_variance: bool) -> ModelConfig {
    let prior = DenoiserConfig { widths: vec![4], blocks: vec![1], embed_dim: 4, ..DenoiserConfig::prior() };
    let decoder = DenoiserConfig { widths: vec![4], blocks: vec![1], embed_dim: 4, patch: 2, ..DenoiserConfig::decoder() };
    ModelConfig {
        image: ImageShape { height: 4, width: 4, channels: 1 },
        latent: LatentSpec { h: 2, w: 2, c: 2, lambda_z0: 5.0 },
        encoder: EncoderConfig { patch: 2, widths: vec![4], blocks: vec![1], learned_variance },
        prior,
        decoder,
        base: None,
        prior_lambda_min: -15.0,
        decoder_schedule: NoiseSchedule::decoder(),
    }
}

/// Fresh networks have zero-initialized output heads, which would hide most
/// of the graph from the check; jitter every parameter first.
fn jittered(cfg: ModelConfig) -> ModelBundle {
    let mut b = ModelBundle::new(cfg, 3).unwrap();
    let mut r = rng::rng_for(11, "jitter");
    let ids: Vec<_> = b.params.ids().collect();
    for id in ids {
        for v in b.params.get_mut(id).data_mut() {
            *v += 0.3 * rng::normal(&mut r);
        }
    }
    b
}

fn loss_value(bundle: &ModelBundle, store: &ParamStore, x: &Tensor, obj: &ObjectiveConfig, step: usize) -> f64 {
    let draws = stage1_draws(5, step, x.batch(), bundle.config());
    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, store);
    let terms = stage1_graph(bundle, &mut ctx, x, &draws, obj, 0.0).unwrap();
    tape.value(terms.loss)[0]
}

fn check(cfg: ModelConfig, obj: ObjectiveConfig) {
    let bundle = jittered(cfg);
    let n_params = bundle.params.flatten().len();
    assert!(n_params <= 2000, "{n_params} parameters");
    let mut r = rng::rng_for(2, "images");
    let x = Tensor::new(&[3, 4, 4, 1], (0..48).map(|_| rng::uniform(&mut r) * 2.0 - 1.0).collect()).unwrap();

    let draws = stage1_draws(5, 0, 3, bundle.config());
    let mut tape = Tape::new();
    let grads = {
        let mut ctx = Ctx::eval(&mut tape, &bundle.params);
        let terms = stage1_graph(&bundle, &mut ctx, &x, &draws, &obj, 0.0).unwrap();
        tape.backward(terms.loss).unwrap()
    };

    let mut store = bundle.params.clone();
    let mut worst = 0.0f64;
    let ids: Vec<_> = bundle.params.ids().collect();
    for id in ids {
        let analytic = grads.param(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; bundle.params.get(id).len()]);
        for k in 0..bundle.params.get(id).len() {
            let v = bundle.params.get(id).data()[k];
            let h = 1e-5 * v.abs().max(1.0);
            store.get_mut(id).data_mut()[k] = v + h;
            let up = loss_value(&bundle, &store, &x, &obj, 0);
            store.get_mut(id).data_mut()[k] = v - h;
            let down = loss_value(&bundle, &store, &x, &obj, 0);
            store.get_mut(id).data_mut()[k] = v;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k];
            let scale = a.abs().max(numeric.abs()).max(1e-3);
            let rel = (a - numeric).abs() / scale;
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{}[{k}]: analytic {a} numeric {numeric}", bundle.params.name(id));
        }
    }
    eprintln!("{n_params} parameters, worst relative error {worst:.2e}");
}

fn objective(prior_mode: PriorMode, decoder_mode: DecoderMode) -> ObjectiveConfig {
    ObjectiveConfig { weighting: WeightingConfig::new(1.0, 1.5).unwrap(), prior_mode, decoder_mode, prior_scale: 1.0 }
}

#[test]
fn stage1_gradient_matches_finite_differences() {
    check(tiny_config(false), objective(PriorMode::Diffusion, DecoderMode::Diffusion));
}

#[test]
fn learned_variance_gradient_matches_finite_differences() {
    check(tiny_config(true), objective(PriorMode::Diffusion, DecoderMode::Diffusion));
}

#[test]
fn ablation_objectives_have_correct_gradients() {
    check(tiny_config(false), objective(PriorMode::Diffusion, DecoderMode::MseReconstruction));
    check(tiny_config(false), objective(PriorMode::Normal, DecoderMode::Diffusion));
}
