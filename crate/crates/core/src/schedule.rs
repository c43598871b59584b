//! Log-SNR noise schedules, the variance-preserving (alpha, sigma) map and the
//! per-noise-level weights shared by every diffusion loss.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::metrics::Estimate;
use crate::model::Denoiser;
use crate::rng;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleShape {
    /// `λ(t)` linear in `t`.
    Linear,
    /// `λ(t) = λmax + (λmin - λmax) · expm1(k t) / expm1(k)`; any nonzero `k`.
    Warped { k: f64 },
}

impl Default for ScheduleShape {
    fn default() -> Self {
        ScheduleShape::Linear
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    lambda_max: f64,
    lambda_min: f64,
    shape: ScheduleShape,
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain { what: "time", value: t });
    }
    Ok(())
}

impl NoiseSchedule {
    pub fn new(lambda_max: f64, lambda_min: f64, shape: ScheduleShape) -> Result<Self> {
        if !lambda_max.is_finite() || !lambda_min.is_finite() {
            return Err(Error::NonFinite("schedule endpoint"));
        }
        if lambda_max <= lambda_min {
            return Err(Error::config("schedule needs lambda_max > lambda_min"));
        }
        if let ScheduleShape::Warped { k } = shape {
            if !k.is_finite() || k == 0.0 {
                return Err(Error::config("warped schedule needs a finite nonzero k"));
            }
        }
        Ok(Self { lambda_max, lambda_min, shape })
    }

    pub fn linear(lambda_max: f64, lambda_min: f64) -> Result<Self> {
        Self::new(lambda_max, lambda_min, ScheduleShape::Linear)
    }

    /// Default latent schedule: `[-15, lambda_z0]`.
    pub fn prior(lambda_z0: f64) -> Result<Self> {
        Self::linear(lambda_z0, -15.0)
    }

    /// Default image-space schedule: `[-15, 15]`.
    pub fn decoder() -> Self {
        Self { lambda_max: 15.0, lambda_min: -15.0, shape: ScheduleShape::Linear }
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn shape(&self) -> ScheduleShape {
        self.shape
    }

    pub fn with_shape(&self, shape: ScheduleShape) -> Result<Self> {
        Self::new(self.lambda_max, self.lambda_min, shape)
    }

    pub fn logsnr(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.logsnr_unchecked(t))
    }

    pub(crate) fn logsnr_unchecked(&self, t: f64) -> f64 {
        let span = self.lambda_min - self.lambda_max;
        match self.shape {
            ScheduleShape::Linear => {
                // Exact endpoints.
                if t == 1.0 {
                    self.lambda_min
                } else {
                    self.lambda_max + t * span
                }
            }
            ScheduleShape::Warped { k } => {
                if t == 1.0 {
                    self.lambda_min
                } else {
                    self.lambda_max + span * (k * t).exp_m1() / k.exp_m1()
                }
            }
        }
    }

    pub fn dlogsnr_dt(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.dlogsnr_dt_unchecked(t))
    }

    pub(crate) fn dlogsnr_dt_unchecked(&self, t: f64) -> f64 {
        let span = self.lambda_min - self.lambda_max;
        match self.shape {
            ScheduleShape::Linear => span,
            ScheduleShape::Warped { k } => span * k * (k * t).exp() / k.exp_m1(),
        }
    }

    /// Inverse of [`Self::logsnr`].
    pub fn time_of(&self, lambda: f64) -> Result<f64> {
        if !(self.lambda_min..=self.lambda_max).contains(&lambda) {
            return Err(Error::Domain { what: "log-SNR", value: lambda });
        }
        let g = (lambda - self.lambda_max) / (self.lambda_min - self.lambda_max);
        Ok(match self.shape {
            ScheduleShape::Linear => g,
            ScheduleShape::Warped { k } => (g * k.exp_m1()).ln_1p() / k,
        })
    }

    /// Weight turning the x-prediction squared error at time `t` into the
    /// unweighted ELBO integrand: `-dλ/dt · exp(λ) / 2`.
    pub fn elbo_weight_x(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.elbo_weight_x_unchecked(t))
    }

    pub(crate) fn elbo_weight_x_unchecked(&self, t: f64) -> f64 {
        -self.dlogsnr_dt_unchecked(t) * self.logsnr_unchecked(t).exp() / 2.0
    }

    pub fn contains(&self, lambda: f64) -> bool {
        lambda >= self.lambda_min && lambda <= self.lambda_max
    }
}

/// Numerically stable logistic function; handles infinite arguments.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSigma {
    pub alpha: f64,
    pub sigma: f64,
}

impl AlphaSigma {
    pub fn logsnr(&self) -> f64 {
        (self.alpha * self.alpha / (self.sigma * self.sigma)).ln()
    }
}

/// Variance-preserving scales: `alpha = sqrt(sigmoid(λ))`, `sigma = sqrt(sigmoid(-λ))`.
pub fn alpha_sigma(lambda: f64) -> Result<AlphaSigma> {
    if !lambda.is_finite() {
        return Err(Error::NonFinite("log-SNR"));
    }
    Ok(alpha_sigma_unchecked(lambda))
}

#[inline]
pub(crate) fn alpha_sigma_unchecked(lambda: f64) -> AlphaSigma {
    AlphaSigma { alpha: sigmoid(lambda).sqrt(), sigma: sigmoid(-lambda).sqrt() }
}

/// `alpha · clean + sigma · noise` at log-SNR `lambda`.
pub fn forward_diffuse(clean: &Tensor, lambda: f64, noise: &Tensor) -> Result<Tensor> {
    let AlphaSigma { alpha, sigma } = alpha_sigma(lambda)?;
    clean.zip_map(noise, |x, e| alpha * x + sigma * e)
}

/// Per-batch-entry version of [`forward_diffuse`].
pub fn forward_diffuse_rows(clean: &Tensor, lambda: &[f64], noise: &Tensor) -> Result<Tensor> {
    clean.ensure_same_shape(noise)?;
    if lambda.len() != clean.batch() {
        return Err(Error::shape(&[clean.batch()], &[lambda.len()]));
    }
    let m = clean.sample_len();
    let mut out = Tensor::zeros(clean.shape());
    for (i, &l) in lambda.iter().enumerate() {
        let AlphaSigma { alpha, sigma } = alpha_sigma(l)?;
        let (c, e) = (clean.sample(i), noise.sample(i));
        for (j, o) in out.data_mut()[i * m..(i + 1) * m].iter_mut().enumerate() {
            *o = alpha * c[j] + sigma * e[j];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightingConfig {
    /// Sigmoid shift `b` in log-SNR units. `+inf` gives the unweighted ELBO.
    #[serde(with = "extended_f64")]
    pub bias: f64,
    /// Multiplicative up-weight of the decoder loss.
    pub loss_factor: f64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self { bias: 0.0, loss_factor: 1.5 }
    }
}

impl WeightingConfig {
    pub fn new(bias: f64, loss_factor: f64) -> Result<Self> {
        let cfg = Self { bias, loss_factor };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Weight 1 at every noise level.
    pub fn unweighted() -> Self {
        Self { bias: f64::INFINITY, loss_factor: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.loss_factor > 0.0 && self.loss_factor.is_finite()) {
            return Err(Error::config("loss_factor must be positive and finite"));
        }
        if self.bias.is_nan() || self.bias == f64::NEG_INFINITY {
            return Err(Error::config("bias must be a number or +inf"));
        }
        Ok(())
    }

    /// `exp(λ) · w_eps(λ)`: the weight of the x-space squared error.
    #[inline]
    pub(crate) fn x_weight(&self, lambda: f64) -> f64 {
        // exp(λ) · sigmoid(b - λ) = 1 / (exp(-λ) + exp(-b))
        self.loss_factor / ((-lambda).exp() + (-self.bias).exp())
    }
}

/// ε-MSE weight `c_lf · sigmoid(b - λ)`: decreasing in λ, so low-noise detail is discounted.
pub fn decoder_weight_eps(lambda: f64, cfg: &WeightingConfig) -> f64 {
    cfg.loss_factor * sigmoid(cfg.bias - lambda)
}

/// Monte-Carlo estimate of `E_t[-dλ/dt / 2 · w_eps(λ) · ‖ε - ε̂‖²]` for a fixed
/// model over a fixed data batch. Its expectation is an integral over λ, so it
/// does not depend on the schedule between common endpoints.
pub fn weighted_loss_estimate<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    cfg: &WeightingConfig,
    model: &D,
    data: &Tensor,
    n_mc: usize,
    seed: u64,
) -> Result<Estimate> {
    if n_mc == 0 {
        return Err(Error::config("n_mc must be positive"));
    }
    if data.batch() == 0 {
        return Err(Error::config("empty data batch"));
    }
    let mut rng = rng::rng_for(seed, "weighted_loss");
    let m = data.sample_len();
    let mut per_sample_shape = data.shape().to_vec();
    const CHUNK: usize = 512;
    let mut terms = Vec::with_capacity(n_mc);
    let mut j = 0;
    while j < n_mc {
        let n = CHUNK.min(n_mc - j);
        per_sample_shape[0] = n;
        let rows: Vec<usize> = (j..j + n).map(|k| k % data.batch()).collect();
        let clean = data.select(&rows);
        let times: Vec<f64> = (0..n).map(|_| rng::uniform(&mut rng)).collect();
        let noise = Tensor::new(&per_sample_shape, rng::normals(&mut rng, n * m))?;
        let lambdas: Vec<f64> = times.iter().map(|&t| schedule.logsnr_unchecked(t)).collect();
        let z_t = forward_diffuse_rows(&clean, &lambdas, &noise)?;
        let pred = model.denoise(&z_t, &lambdas)?;
        let sq = clean.row_sq_dist(&pred)?;
        for i in 0..n {
            let w = -schedule.dlogsnr_dt_unchecked(times[i]) / 2.0 * cfg.x_weight(lambdas[i]);
            terms.push(w * sq[i]);
        }
        j += n;
    }
    Ok(Estimate::from_samples(&terms))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceReport {
    pub a: Estimate,
    pub b: Estimate,
    pub combined_se: f64,
    /// `|a - b| / combined_se`.
    pub z_score: f64,
}

impl InvarianceReport {
    pub fn agrees_within(&self, n_se: f64) -> bool {
        (self.a.mean - self.b.mean).abs() <= n_se * self.combined_se
    }
}

/// Compare the weighted loss under two schedules with common endpoints.
pub fn schedule_invariance_check<D: Denoiser + ?Sized>(
    cfg: &WeightingConfig,
    schedule_a: &NoiseSchedule,
    schedule_b: &NoiseSchedule,
    model: &D,
    data: &Tensor,
    n_mc: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    if schedule_a.lambda_max != schedule_b.lambda_max || schedule_a.lambda_min != schedule_b.lambda_min {
        return Err(Error::config("schedules must share lambda_max and lambda_min"));
    }
    let a = weighted_loss_estimate(schedule_a, cfg, model, data, n_mc, seed)?;
    let b = weighted_loss_estimate(schedule_b, cfg, model, data, n_mc, seed)?;
    let combined_se = (a.std_error * a.std_error + b.std_error * b.std_error).sqrt();
    let z_score = if combined_se > 0.0 { (a.mean - b.mean).abs() / combined_se } else { 0.0 };
    Ok(InvarianceReport { a, b, combined_se, z_score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lin() -> NoiseSchedule {
        NoiseSchedule::linear(5.0, -15.0).unwrap()
    }

    #[test]
    fn linear_endpoints_and_midpoint() {
        let s = lin();
        assert_eq!(s.logsnr(0.0).unwrap(), 5.0);
        assert_eq!(s.logsnr(1.0).unwrap(), -15.0);
        assert_eq!(s.logsnr(0.5).unwrap(), -5.0);
    }

    #[test]
    fn time_outside_unit_interval_is_rejected() {
        let s = lin();
        assert!(s.logsnr(-0.01).is_err());
        assert!(s.logsnr(1.01).is_err());
        assert!(s.dlogsnr_dt(2.0).is_err());
        assert!(s.elbo_weight_x(f64::NAN).is_err());
    }

    #[test]
    fn degenerate_endpoints_are_rejected() {
        assert!(NoiseSchedule::linear(0.0, 0.0).is_err());
        assert!(NoiseSchedule::linear(-1.0, 0.0).is_err());
        assert!(NoiseSchedule::linear(f64::INFINITY, 0.0).is_err());
        assert!(NoiseSchedule::new(5.0, -15.0, ScheduleShape::Warped { k: 0.0 }).is_err());
    }

    #[test]
    fn linear_slope_is_constant() {
        let s = lin();
        for t in [0.0, 0.1, 0.5, 0.99, 1.0] {
            assert_eq!(s.dlogsnr_dt(t).unwrap(), -20.0);
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        let mut r = rng::rng_for(11, "fd");
        for shape in [ScheduleShape::Linear, ScheduleShape::Warped { k: 2.5 }, ScheduleShape::Warped { k: -1.5 }] {
            let s = lin().with_shape(shape).unwrap();
            for _ in 0..100 {
                let t = 1e-3 + (1.0 - 2e-3) * rng::uniform(&mut r);
                let h = 1e-5;
                let fd = (s.logsnr(t + h).unwrap() - s.logsnr(t - h).unwrap()) / (2.0 * h);
                assert!((fd - s.dlogsnr_dt(t).unwrap()).abs() < 1e-6, "{shape:?} t={t}");
            }
        }
    }

    #[test]
    fn time_of_inverts_logsnr() {
        for shape in [ScheduleShape::Linear, ScheduleShape::Warped { k: 3.0 }] {
            let s = lin().with_shape(shape).unwrap();
            for t in [0.0, 0.2, 0.75, 1.0] {
                let l = s.logsnr(t).unwrap();
                assert!((s.time_of(l).unwrap() - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alpha_sigma_examples() {
        let a = alpha_sigma(0.0).unwrap();
        assert!((a.alpha - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((a.sigma - 0.5f64.sqrt()).abs() < 1e-15);
        let a = alpha_sigma(5.0).unwrap();
        assert!((a.sigma - 0.0818).abs() < 1e-4, "{}", a.sigma);
        assert!((a.alpha - 0.9967).abs() < 1e-4, "{}", a.alpha);
        let b = alpha_sigma(-5.0).unwrap();
        assert_eq!(a.alpha, b.sigma);
        assert_eq!(a.sigma, b.alpha);
        assert!(alpha_sigma(f64::NAN).is_err());
        assert!(alpha_sigma(f64::INFINITY).is_err());
    }

    #[test]
    fn forward_diffuse_special_cases() {
        let clean = Tensor::new(&[1, 3], alloc::vec![0.5, -1.0, 2.0]).unwrap();
        let zero = Tensor::zeros(&[1, 3]);
        let out = forward_diffuse(&clean, 5.0, &zero).unwrap();
        for (o, c) in out.data().iter().zip(clean.data()) {
            assert!((o - 0.9967 * c).abs() < 1e-4 * c.abs().max(1.0));
        }
        let out = forward_diffuse(&zero, 5.0, &clean).unwrap();
        let s = alpha_sigma(5.0).unwrap().sigma;
        for (o, c) in out.data().iter().zip(clean.data()) {
            assert_eq!(*o, s * c);
        }
        assert!(forward_diffuse(&clean, 0.0, &Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn forward_diffuse_preserves_unit_variance() {
        let n = 100_000;
        let mut r = rng::rng_for(5, "var");
        let clean = Tensor::new(&[n, 1], rng::normals(&mut r, n)).unwrap();
        let noise = Tensor::new(&[n, 1], rng::normals(&mut r, n)).unwrap();
        for lambda in [-3.0, 0.0, 5.0] {
            let out = forward_diffuse(&clean, lambda, &noise).unwrap();
            let sq: alloc::vec::Vec<f64> = out.data().iter().map(|v| v * v).collect();
            let est = Estimate::from_samples(&sq);
            assert!((est.mean - 1.0).abs() < 3.0 * est.std_error, "λ={lambda}: {est:?}");
        }
    }

    #[test]
    fn elbo_weight_examples() {
        let s = lin();
        let t0 = s.time_of(0.0).unwrap();
        assert!((s.elbo_weight_x(t0).unwrap() - 10.0).abs() < 1e-12);
        // 10 · e^-15 = 3.0590232050182579e-6 (mpmath, 30 digits)
        let w1 = s.elbo_weight_x(1.0).unwrap();
        assert!((w1 - 3.059_023_205_018_258e-6).abs() < 1e-18, "{w1}");
    }

    #[test]
    fn decoder_weight_examples() {
        let c = WeightingConfig::new(0.0, 1.0).unwrap();
        assert_eq!(decoder_weight_eps(0.0, &c), 0.5);
        let c = WeightingConfig::new(0.0, 1.6).unwrap();
        assert!((decoder_weight_eps(-60.0, &c) - 1.6).abs() < 1e-12);
        let c = WeightingConfig::new(0.0, 2.0).unwrap();
        assert_eq!(decoder_weight_eps(0.0, &c), 1.0);
        assert!(WeightingConfig::new(0.0, 0.0).is_err());
        assert!(WeightingConfig::new(0.0, -1.0).is_err());
    }

    #[test]
    fn x_weight_matches_eps_weight_times_snr() {
        let c = WeightingConfig::new(1.5, 1.7).unwrap();
        for l in [-15.0, -3.0, 0.0, 2.0, 10.0, 15.0] {
            let direct = decoder_weight_eps(l, &c) * f64::exp(l);
            assert!((c.x_weight(l) - direct).abs() <= 1e-12 * direct.max(1.0));
        }
        let u = WeightingConfig::unweighted();
        assert_eq!(decoder_weight_eps(3.0, &u), 1.0);
    }

    proptest! {
        #[test]
        fn variance_preserving(lambda in -60.0f64..60.0) {
            let a = alpha_sigma(lambda).unwrap();
            prop_assert!((a.alpha * a.alpha + a.sigma * a.sigma - 1.0).abs() < 1e-12);
        }

        #[test]
        fn logsnr_roundtrip(lambda in -20.0f64..20.0) {
            let a = alpha_sigma(lambda).unwrap();
            prop_assert!((a.logsnr() - lambda).abs() < 1e-9);
        }

        #[test]
        fn logsnr_strictly_decreasing(hi in -10.0f64..20.0, gap in 0.1f64..30.0, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0, k in 0.5f64..4.0) {
            prop_assume!(t1 < t2);
            for shape in [ScheduleShape::Linear, ScheduleShape::Warped { k }] {
                let s = NoiseSchedule::new(hi, hi - gap, shape).unwrap();
                prop_assert!(s.logsnr(t1).unwrap() > s.logsnr(t2).unwrap());
                prop_assert!(s.dlogsnr_dt(t1).unwrap() < 0.0);
                prop_assert!(s.elbo_weight_x(t1).unwrap() >= 0.0);
            }
        }

        #[test]
        fn decoder_weight_decreasing(b in -5.0f64..5.0, c in 0.1f64..5.0, l1 in -20.0f64..20.0, d in 0.01f64..5.0) {
            let cfg = WeightingConfig::new(b, c).unwrap();
            prop_assert!(decoder_weight_eps(l1, &cfg) > decoder_weight_eps(l1 + d, &cfg));
        }
    }
}

/// Serializes non-finite floats as the strings `inf`, `-inf` and `nan`, since
/// JSON has no literal for them.
mod extended_f64 {
    use core::fmt;
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct F64Visitor;

    impl Visitor<'_> for F64Visitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(F64Visitor)
    }
}
