//! Deterministic desk-scale laboratory for mask-guided latent-diffusion
//! inpainting.
//!
//! The crate provides the FreeCond conditioning transforms (a timestep-gated
//! low-pass image condition and an `α/β`-scaled mask condition), a seeded toy
//! denoiser with the same conditioning dataflow as an inpainting UNet, a
//! classifier-free-guidance sampler, the channel-influence analysis of the
//! cross-attention query, and evaluation metrics.

pub mod analysis;
pub mod conditioning;
pub mod error;
pub mod fixtures;
pub mod freq;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod toynet;

pub use conditioning::FreeCondParams;
pub use error::{Error, Result};
pub use grid::{LatentGrid, MaskGrid};
pub use sampler::{InpaintOptions, InpaintOutput, RunRecord};
pub use toynet::{NetConfig, NetWeights};
