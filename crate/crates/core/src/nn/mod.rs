//! Small differentiable networks for the encoder, latent prior, image decoder
//! and stage-2 base model, on a reverse-mode tape.

mod bundle;
pub mod config;
mod encoder;
pub mod flops;
pub mod layers;
mod mixer;
mod params;
pub mod tape;
mod unet;

pub use bundle::{split_mean_log_std, DecoderView, LatentModel, LatentView, ModelBundle};
pub use config::{Conditioning, DenoiserConfig, EncoderConfig, ImageShape, LatentSpec, ModelConfig, Role};
pub use encoder::EncoderNet;
pub use layers::Ctx;
pub use mixer::MixerDenoiser;
pub use params::{ParamId, ParamStore};
pub use tape::{Grads, Tape, Var};
pub use unet::UNetDecoder;
