//! Linear-Gaussian reference models with closed-form answers, used as
//! oracles for the estimators and samplers.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::model::{Denoiser, Encoder};
use crate::schedule::{alpha_sigma, NoiseSchedule};
use crate::{Error, Result, Tensor};

/// Bayes-optimal x-prediction for data `N(0, var · I)` under VP diffusion:
/// `x̂ = α v z / (α² v + σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDenoiser {
    pub var: f64,
}

impl Denoiser for GaussianDenoiser {
    fn denoise(&self, z_t: &Tensor, lambda: &[f64]) -> Result<Tensor> {
        if lambda.len() != z_t.batch() {
            return Err(Error::shape(&[z_t.batch()], &[lambda.len()]));
        }
        let m = z_t.sample_len();
        let gains = lambda
            .iter()
            .map(|&l| {
                let s = alpha_sigma(l)?;
                Ok(s.alpha * self.var / (s.alpha * s.alpha * self.var + s.sigma * s.sigma))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::from_fn(z_t.shape(), |i| gains[i / m] * z_t.data()[i]))
    }
}

/// `x̂ = gain · z` regardless of noise level; a deliberately imperfect model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledDenoiser {
    pub gain: f64,
}

impl Denoiser for ScaledDenoiser {
    fn denoise(&self, z_t: &Tensor, _lambda: &[f64]) -> Result<Tensor> {
        Ok(z_t.map(|v| self.gain * v))
    }
}

/// Predicts zero everywhere.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn denoise(&self, z_t: &Tensor, _lambda: &[f64]) -> Result<Tensor> {
        Ok(Tensor::zeros(z_t.shape()))
    }
}

/// `z = scale · x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearEncoder {
    pub scale: f64,
}

impl Encoder for LinearEncoder {
    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.map(|v| self.scale * v))
    }
}

/// Mutual information per dimension between `z ~ N(0, var)` and
/// `z_0 = α z + σ ε` at log-SNR `lambda`: `½ ln(1 + var · e^λ)`.
pub fn gaussian_rate(var: f64, lambda: f64) -> f64 {
    0.5 * (var * lambda.exp()).ln_1p()
}

/// Exact expectation, per dimension, of the prior ELBO (diffusion term plus
/// endpoint KL) for data `N(0, var)` with the Bayes-optimal denoiser.
pub fn gaussian_elbo_expectation(var: f64, schedule: &NoiseSchedule) -> f64 {
    let (l0, l1) = (schedule.lambda_max(), schedule.lambda_min());
    let diffusion = gaussian_rate(var, l0) - gaussian_rate(var, l1);
    let a1 = crate::schedule::sigmoid(l1);
    let endpoint = 0.5 * (a1 * var - a1 - (-a1).ln_1p());
    diffusion + endpoint
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elbo_expectation_is_close_to_rate() {
        let s = NoiseSchedule::prior(5.0).unwrap();
        for v in [0.1, 1.0, 3.0] {
            assert!((gaussian_elbo_expectation(v, &s) - gaussian_rate(v, 5.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn bayes_denoiser_is_identity_at_high_snr() {
        let d = GaussianDenoiser { var: 1.0 };
        let z = Tensor::full(&[1, 1], 0.5);
        let out = d.denoise(&z, &[30.0]).unwrap();
        assert!((out.data()[0] - 0.5).abs() < 1e-6);
    }
}
