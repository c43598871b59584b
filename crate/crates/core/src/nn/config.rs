//! Architecture configuration for the four networks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn numel(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Latent grid and the fixed log-SNR at which latents are handed to the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub lambda_z0: f64,
}

impl LatentSpec {
    pub fn new(h: usize, w: usize, c: usize, lambda_z0: f64) -> Result<Self> {
        let s = Self { h, w, c, lambda_z0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.c == 0 {
            return Err(Error::config("latent dimensions must be positive"));
        }
        if !self.lambda_z0.is_finite() {
            return Err(Error::NonFinite("lambda_z0"));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.h, self.w, self.c]
    }

    pub fn numel(&self) -> usize {
        self.h * self.w * self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Spatial patching factor applied to the input image.
    pub patch: usize,
    /// Channel width per stage; each stage after the first halves the resolution.
    pub widths: Vec<usize>,
    /// Residual blocks per stage.
    pub blocks: Vec<usize>,
    /// Predict a per-dimension standard deviation next to the mean.
    pub learned_variance: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { patch: 2, widths: vec![16, 32], blocks: vec![1, 1], learned_variance: false }
    }
}

impl EncoderConfig {
    pub fn validate(&self, image: &ImageShape, latent: &LatentSpec) -> Result<()> {
        check_stages("encoder", &self.widths, &self.blocks)?;
        if self.patch == 0 {
            return Err(Error::config("encoder.patch must be positive"));
        }
        let down = self.patch << (self.widths.len() - 1);
        if image.height % down != 0 || image.width % down != 0 {
            return Err(Error::config(format!(
                "image {}x{} not divisible by total encoder downsampling {down}",
                image.height, image.width
            )));
        }
        if image.height / down != latent.h || image.width / down != latent.w {
            return Err(Error::config(format!(
                "encoder output {}x{} does not match latent {}x{}",
                image.height / down,
                image.width / down,
                latent.h,
                latent.w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prior,
    Decoder,
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    None,
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub role: Role,
    pub conditioning: Conditioning,
    /// Token-mixer width (prior/base use `widths[0]`) or U-net level widths (decoder).
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
    /// Image patching factor; decoder only.
    pub patch: usize,
    pub dropout_rate: f64,
    pub embed_dim: usize,
}

impl DenoiserConfig {
    pub fn prior() -> Self {
        Self {
            role: Role::Prior,
            conditioning: Conditioning::None,
            widths: vec![32],
            blocks: vec![2],
            patch: 1,
            dropout_rate: 0.0,
            embed_dim: 32,
        }
    }

    pub fn base() -> Self {
        Self { role: Role::Base, dropout_rate: 0.1, ..Self::prior() }
    }

    pub fn decoder() -> Self {
        Self {
            role: Role::Decoder,
            conditioning: Conditioning::Latent,
            widths: vec![16, 32],
            blocks: vec![1, 1],
            patch: 2,
            dropout_rate: 0.0,
            embed_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.role, self.conditioning) {
            (Role::Decoder, Conditioning::Latent) | (Role::Prior | Role::Base, Conditioning::None) => {}
            (Role::Decoder, _) => return Err(Error::config("decoder requires latent conditioning")),
            _ => return Err(Error::config("prior/base denoisers take no conditioning")),
        }
        check_stages("denoiser", &self.widths, &self.blocks)?;
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must be in [0, 1)"));
        }
        if self.embed_dim == 0 || self.patch == 0 {
            return Err(Error::config("embed_dim and patch must be positive"));
        }
        Ok(())
    }
}

fn check_stages(what: &str, widths: &[usize], blocks: &[usize]) -> Result<()> {
    if widths.is_empty() || widths.iter().any(|&w| w == 0) {
        return Err(Error::config(format!("{what} widths must be non-empty and positive")));
    }
    if widths.len() != blocks.len() {
        return Err(Error::config(format!("{what} widths and blocks must have equal length")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image: ImageShape,
    pub latent: LatentSpec,
    pub encoder: EncoderConfig,
    pub prior: DenoiserConfig,
    pub decoder: DenoiserConfig,
    pub base: Option<DenoiserConfig>,
    /// Log-SNR at the noisy end of the latent schedule; the clean end is `latent.lambda_z0`.
    pub prior_lambda_min: f64,
    pub decoder_schedule: NoiseSchedule,
}

impl Default for ModelConfig {
    /// 16×16 grayscale images to 4×4×4 latents.
    fn default() -> Self {
        Self {
            image: ImageShape { height: 16, width: 16, channels: 1 },
            latent: LatentSpec { h: 4, w: 4, c: 4, lambda_z0: 5.0 },
            encoder: EncoderConfig::default(),
            prior: DenoiserConfig::prior(),
            decoder: DenoiserConfig::decoder(),
            base: Some(DenoiserConfig::base()),
            prior_lambda_min: -15.0,
            decoder_schedule: NoiseSchedule::decoder(),
        }
    }
}

impl ModelConfig {
    pub fn prior_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.latent.lambda_z0, self.prior_lambda_min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.height == 0 || self.image.width == 0 || self.image.channels == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        self.latent.validate()?;
        self.encoder.validate(&self.image, &self.latent)?;
        self.prior_schedule()?;
        if self.prior.role != Role::Prior {
            return Err(Error::config("prior config must have role prior"));
        }
        if self.decoder.role != Role::Decoder {
            return Err(Error::config("decoder config must have role decoder"));
        }
        self.prior.validate()?;
        self.decoder.validate()?;
        if let Some(b) = &self.base {
            if b.role != Role::Base {
                return Err(Error::config("base config must have role base"));
            }
            b.validate()?;
        }
        let d = &self.decoder;
        let down = d.patch << (d.widths.len() - 1);
        if self.image.height % down != 0 || self.image.width % down != 0 {
            return Err(Error::config("image not divisible by decoder downsampling"));
        }
        let (bh, bw) = (self.image.height / down, self.image.width / down);
        if bh % self.latent.h != 0 || bw % self.latent.w != 0 || bh / self.latent.h != bw / self.latent.w {
            return Err(Error::config(format!(
                "decoder bottleneck {bh}x{bw} is not an integer upsampling of latent {}x{}",
                self.latent.h, self.latent.w
            )));
        }
        Ok(())
    }
}
