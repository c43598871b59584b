//! Closed-form and Monte-Carlo oracles for schedules, losses and the
//! bitrate estimator.

use proptest::prelude::*;
use unilat_core::metrics::{elbo_estimate, Estimate};
use unilat_core::objective::{
    decoder_term_eps, decoder_term_x, endpoint_kl_prior, eps_from_x, gaussian_kl, learned_variance_entropy, mse_reconstruction_loss,
    noise_latent, normal_prior_kl, prior_mse_term,
};
use unilat_core::rng;
use unilat_core::schedule::{decoder_weight_eps, forward_diffuse_rows, schedule_invariance_check};
use unilat_core::toy::{gaussian_elbo_expectation, gaussian_rate, GaussianDenoiser, ScaledDenoiser, ZeroDenoiser};
use unilat_core::{alpha_sigma, NoiseSchedule, ScheduleShape, Tensor, WeightingConfig};

fn randn(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, rng::normals(&mut rng::rng_for(seed, "test"), n)).unwrap()
}

/// Monte-Carlo `KL[N(m, s²) | N(0, 1)]` with `n` draws.
fn mc_kl(m: f64, s: f64, n: usize, seed: u64) -> Estimate {
    let mut r = rng::rng_for(seed, "mc_kl");
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            let e = rng::normal(&mut r);
            let x = m + s * e;
            -s.ln() - e * e / 2.0 + x * x / 2.0
        })
        .collect();
    Estimate::from_samples(&xs)
}

#[test]
fn sigma_at_encoding_logsnr() {
    let s = alpha_sigma(5.0).unwrap();
    assert!((s.sigma - 0.08181).abs() < 1e-5);
    assert!((s.alpha - 0.9967).abs() < 1e-4);
    let m = alpha_sigma(-5.0).unwrap();
    assert_eq!(m.alpha, s.sigma);
    assert_eq!(m.sigma, s.alpha);
}

#[test]
fn elbo_weight_examples() {
    let s = NoiseSchedule::linear(5.0, -15.0).unwrap();
    let t0 = s.time_of(0.0).unwrap();
    assert!((s.elbo_weight_x(t0).unwrap() - 10.0).abs() < 1e-12);
    let w1 = s.elbo_weight_x(1.0).unwrap();
    assert!((w1 - 10.0 * (-15.0f64).exp()).abs() < 1e-18);
    assert!((w1 - 3.059e-6).abs() < 1e-9);
}

#[test]
fn sigmoid_weighting_examples() {
    let w = |b, c, l| decoder_weight_eps(l, &WeightingConfig::new(b, c).unwrap());
    assert!((w(0.0, 1.0, 0.0) - 0.5).abs() < 1e-15);
    assert!((w(0.0, 1.6, -800.0) - 1.6).abs() < 1e-15);
    assert!((w(0.0, 2.0, 0.0) - 1.0).abs() < 1e-15);
    assert!(w(1.0, 1.5, 3.0) < w(1.0, 1.5, 2.0));
}

#[test]
fn forward_diffusion_preserves_unit_variance() {
    let n = 100_000;
    let clean = randn(&[n, 1], 1);
    let noise = randn(&[n, 1], 2);
    let mut r = rng::rng_for(3, "lambda");
    let lambda: Vec<f64> = (0..n).map(|_| -10.0 + 20.0 * rng::uniform(&mut r)).collect();
    let z = forward_diffuse_rows(&clean, &lambda, &noise).unwrap();
    let sq: Vec<f64> = z.data().iter().map(|v| v * v).collect();
    let e = Estimate::from_samples(&sq);
    assert!((e.mean - 1.0).abs() < 3.0 * e.std_error, "{e:?}");
}

#[test]
fn noised_latent_examples() {
    let z = randn(&[4, 2, 2, 1], 4);
    let zero = Tensor::zeros(z.shape());
    let a = noise_latent(&z, 5.0, &zero).unwrap();
    for (x, y) in a.data().iter().zip(z.data()) {
        assert!((x - 0.99665 * y).abs() < 1e-5 * y.abs().max(1.0));
    }
    let noise = randn(z.shape(), 5);
    let b = noise_latent(&zero, 5.0, &noise).unwrap();
    for (x, e) in b.data().iter().zip(noise.data()) {
        assert!((x - 0.0818098 * e).abs() < 1e-6 * e.abs().max(1.0));
    }
    let n = 100_000;
    let z0 = noise_latent(&randn(&[n, 1], 6), 5.0, &randn(&[n, 1], 7)).unwrap();
    let e = Estimate::from_samples(&z0.data().iter().map(|v| v * v).collect::<Vec<_>>());
    assert!((e.mean - 1.0).abs() < 3.0 * e.std_error);
}

#[test]
fn x_and_eps_loss_forms_agree() {
    let s = NoiseSchedule::decoder();
    let mut r = rng::rng_for(8, "instances");
    for k in 0..100 {
        let n = 3;
        let x = randn(&[n, 4, 4, 2], 100 + k);
        let eps = randn(&[n, 4, 4, 2], 300 + k);
        let x_hat = randn(&[n, 4, 4, 2], 500 + k);
        let t: Vec<f64> = (0..n).map(|_| 0.02 + 0.96 * rng::uniform(&mut r)).collect();
        let lambda: Vec<f64> = t.iter().map(|&t| s.logsnr(t).unwrap()).collect();
        let x_t = forward_diffuse_rows(&x, &lambda, &eps).unwrap();
        let eps_hat = eps_from_x(&x_t, &x_hat, &lambda).unwrap();
        let cfg = WeightingConfig::new(-2.0 + 4.0 * rng::uniform(&mut r), 1.0 + rng::uniform(&mut r)).unwrap();
        let a = decoder_term_x(&s, &cfg, &t, &x, &x_hat).unwrap();
        let b = decoder_term_eps(&s, &cfg, &t, &eps, &eps_hat).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn unweighted_decoder_loss_is_the_elbo_term() {
    let s = NoiseSchedule::decoder();
    let mut r = rng::rng_for(9, "t");
    for k in 0..100 {
        let x = randn(&[2, 3, 3, 1], 700 + k);
        let x_hat = randn(&[2, 3, 3, 1], 900 + k);
        let t: Vec<f64> = (0..2).map(|_| rng::uniform(&mut r)).collect();
        let a = decoder_term_x(&s, &WeightingConfig::unweighted(), &t, &x, &x_hat).unwrap();
        let b = prior_mse_term(&s, &t, &x, &x_hat).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
        }
        let doubled = decoder_term_x(&s, &WeightingConfig::new(0.5, 3.0).unwrap(), &t, &x, &x_hat).unwrap();
        let single = decoder_term_x(&s, &WeightingConfig::new(0.5, 1.5).unwrap(), &t, &x, &x_hat).unwrap();
        for (d, s) in doubled.iter().zip(&single) {
            assert_eq!(*d, 2.0 * s);
        }
    }
}

#[test]
fn prior_term_plug_in() {
    let s = NoiseSchedule::linear(5.0, -15.0).unwrap();
    let t = s.time_of(0.0).unwrap();
    let z = Tensor::full(&[1, 1, 1, 1], 1.0);
    let mse = prior_mse_term(&s, &[t], &z, &Tensor::zeros(&[1, 1, 1, 1])).unwrap();
    assert!((mse[0] - 10.0).abs() < 1e-12);
    assert_eq!(prior_mse_term(&s, &[t], &z, &z).unwrap()[0], 0.0);
}

#[test]
fn endpoint_kl_matches_monte_carlo() {
    let s = NoiseSchedule::linear(5.0, -1.0).unwrap();
    let a = alpha_sigma(-1.0).unwrap();
    for z in [0.0, 1.5, -2.0] {
        let kl = endpoint_kl_prior(&Tensor::full(&[1, 1], z), &s)[0];
        let mc = mc_kl(a.alpha * z, a.sigma, 4_000_000, 10);
        assert!((kl - mc.mean).abs() < 1e-3, "z={z}: {kl} vs {mc:?}");
    }
    // N(1, 0.25) against N(0, 1)
    let closed = gaussian_kl(1.0, 0.25);
    assert!((closed - 0.5 * (0.25 + 4f64.ln())).abs() < 1e-15);
    assert!((closed - 0.8181).abs() < 1e-4);
    let mc = mc_kl(1.0, 0.5, 4_000_000, 11);
    assert!((closed - mc.mean).abs() < 1e-3);
}

#[test]
fn endpoint_kl_vanishes_at_the_noisy_end() {
    let s = NoiseSchedule::prior(5.0).unwrap();
    let kl = endpoint_kl_prior(&Tensor::zeros(&[1, 8]), &s)[0];
    assert!((0.0..=8e-6).contains(&kl));
    let identical = endpoint_kl_prior(&Tensor::zeros(&[1, 1]), &NoiseSchedule::linear(5.0, -745.0).unwrap())[0];
    assert_eq!(identical, 0.0);
}

#[test]
fn normal_prior_kl_plug_in() {
    let v = normal_prior_kl(&Tensor::zeros(&[1, 1]), 0.0).unwrap()[0];
    assert!((v - 0.5 * (-0.5 + 2f64.ln())).abs() < 1e-15);
    assert!((v - 0.0966).abs() < 1e-4);
    let mc = mc_kl(0.0, 0.5f64.sqrt(), 4_000_000, 12);
    assert!((v - mc.mean).abs() < 1e-3);
    let k1 = normal_prior_kl(&Tensor::full(&[1, 1], 1.0), 5.0).unwrap()[0];
    let k2 = normal_prior_kl(&Tensor::full(&[1, 1], 2.0), 5.0).unwrap()[0];
    let k0 = normal_prior_kl(&Tensor::zeros(&[1, 1]), 5.0).unwrap()[0];
    assert!(((k2 - k0) - 4.0 * (k1 - k0)).abs() < 1e-12);
}

#[test]
fn entropy_correction_plug_in() {
    let sigma = Tensor::full(&[1, 1], (-2.5f64).exp());
    let v = learned_variance_entropy(&sigma, 5.0).unwrap()[0];
    assert!((v + 0.5 * 2f64.ln()).abs() < 1e-15);
    assert!((v + 0.34657359).abs() < 1e-8);
    assert_eq!(learned_variance_entropy(&Tensor::zeros(&[1, 3]), 5.0).unwrap()[0], 0.0);
    assert!(learned_variance_entropy(&Tensor::full(&[1, 1], -0.1), 5.0).is_err());
}

#[test]
fn mse_reconstruction_offset() {
    let x = randn(&[2, 4, 4, 1], 13);
    let y = x.map(|v| v + 0.1);
    for v in mse_reconstruction_loss(&x, &y, 1.7).unwrap() {
        assert!((v - 0.01 * 1.7).abs() < 1e-12);
    }
    assert_eq!(mse_reconstruction_loss(&x, &x, 1.7).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn gaussian_bitrate_matches_closed_form() {
    let schedule = NoiseSchedule::prior(5.0).unwrap();
    for var in [0.25f64, 1.0] {
        let n = 100_000;
        let z = randn(&[n, 1, 1, 1], 20).map(|v| v * var.sqrt());
        let est = elbo_estimate(&GaussianDenoiser { var }, &schedule, &z, n, 21).unwrap();
        let exact = gaussian_elbo_expectation(var, &schedule);
        assert!((est.mean - exact).abs() < 3.0 * est.std_error, "var {var}: {est:?} vs {exact}");
        // the ELBO of the Bayes denoiser is the mutual information up to a negligible endpoint term
        assert!((exact - gaussian_rate(var, 5.0)).abs() < 1e-5);
    }
}

#[test]
fn zero_latents_cost_only_the_endpoint_kl() {
    let schedule = NoiseSchedule::prior(5.0).unwrap();
    let z = Tensor::zeros(&[16, 2, 2, 4]);
    let est = elbo_estimate(&ZeroDenoiser, &schedule, &z, 1024, 1).unwrap();
    let bits_per_dim = est.mean / (16.0 * core::f64::consts::LN_2);
    assert!((0.0..=1e-6).contains(&bits_per_dim));
}

#[test]
fn weighted_loss_is_schedule_invariant() {
    let data = randn(&[64, 2, 2, 1], 30);
    let a = NoiseSchedule::linear(5.0, -15.0).unwrap();
    let b = a.with_shape(ScheduleShape::Warped { k: 3.0 }).unwrap();
    let cfg = WeightingConfig::new(0.0, 1.5).unwrap();
    let model = ScaledDenoiser { gain: 0.5 };
    let r = schedule_invariance_check(&cfg, &a, &b, &model, &data, 100_000, 31).unwrap();
    assert!(r.agrees_within(2.0), "{r:?}");
    let same = schedule_invariance_check(&cfg, &a, &a, &model, &data, 1000, 31).unwrap();
    assert_eq!(same.a, same.b);
    assert!(schedule_invariance_check(&cfg, &a, &a, &model, &data, 0, 31).is_err());
    let other = NoiseSchedule::linear(5.0, -10.0).unwrap();
    assert!(schedule_invariance_check(&cfg, &a, &other, &model, &data, 10, 31).is_err());
}

proptest! {
    #[test]
    fn alpha_sigma_is_variance_preserving(l in -20.0f64..20.0) {
        let s = alpha_sigma(l).unwrap();
        prop_assert!((s.alpha * s.alpha + s.sigma * s.sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logsnr_is_strictly_decreasing(hi in -10.0f64..20.0, span in 0.1f64..30.0, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        prop_assume!((t1 - t2).abs() > 1e-9);
        let s = NoiseSchedule::linear(hi, hi - span).unwrap();
        let (a, b) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(s.logsnr(a).unwrap() > s.logsnr(b).unwrap());
        prop_assert!(s.elbo_weight_x(a).unwrap() >= 0.0);
    }

    #[test]
    fn kl_terms_are_nonnegative(z in prop::collection::vec(-5.0f64..5.0, 1..16), lmin in -20.0f64..4.0) {
        let t = Tensor::new(&[1, z.len()], z).unwrap();
        let s = NoiseSchedule::linear(5.0, lmin).unwrap();
        prop_assert!(endpoint_kl_prior(&t, &s)[0] >= 0.0);
        prop_assert!(normal_prior_kl(&t, lmin).unwrap()[0] >= 0.0);
    }

    #[test]
    fn entropy_correction_decreases_in_sigma(a in 0.0f64..3.0, d in 1e-3f64..1.0) {
        let lo = learned_variance_entropy(&Tensor::full(&[1, 1], a), 5.0).unwrap()[0];
        let hi = learned_variance_entropy(&Tensor::full(&[1, 1], a + d), 5.0).unwrap()[0];
        prop_assert!(hi < lo);
        prop_assert!(lo <= 0.0);
    }
}
