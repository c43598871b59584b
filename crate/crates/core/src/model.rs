//! Roles shared by trained networks and analytic reference models.

use crate::{Result, Tensor};

/// Deterministic map from images `[n, H, W, C]` to clean latents `[n, h, w, c]`.
pub trait Encoder {
    fn encode(&self, x: &Tensor) -> Result<Tensor>;
}

/// x-prediction denoiser: given `z_t` and one log-SNR per batch entry,
/// predicts the clean input.
pub trait Denoiser {
    fn denoise(&self, z_t: &Tensor, lambda: &[f64]) -> Result<Tensor>;
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn denoise(&self, z_t: &Tensor, lambda: &[f64]) -> Result<Tensor> {
        (**self).denoise(z_t, lambda)
    }
}

impl<T: Encoder + ?Sized> Encoder for &T {
    fn encode(&self, x: &Tensor) -> Result<Tensor> {
        (**self).encode(x)
    }
}
