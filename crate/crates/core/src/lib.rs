//! Latent diffusion autoencoders: an encoder with fixed Gaussian encoding noise, a diffusion
//! prior that measures and regularizes the information in the latent, and a
//! diffusion decoder, trained jointly and sampled with ancestral chains.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and image IO
//! live in the `unilat` companion crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use schedule::{alpha_sigma, AlphaSigma, NoiseSchedule, ScheduleShape, WeightingConfig};
pub use tensor::Tensor;
