//! Seeded toy stand-in for a latent-diffusion inpainting denoiser.
//!
//! The dataflow mirrors a real inpainting UNet's first block at a single
//! resolution:
//!
//! ```text
//! h0 = Φ0(concat[z_t, M, z_c])            3×3 affine conv
//! h1 = h0 + SelfAttn(h0)
//! h2 = h1 + CrossAttn(h1, Ψ(prompt))
//! h3 = h2 + time_embedding[t]
//! ε  = z_t + g · (W_out · h3 + b_out)     per position, g = HEAD_GAIN
//! ```
//!
//! The identity skip makes the untrained network behave like a noise
//! predictor at high noise levels, which keeps guided trajectories bounded.
//! The image encoder and decoder are fixed stride-`f` linear maps. Nothing
//! here is trained; the network only needs the right shapes and determinism.
//! The trunk (`h0`, `h1`) does not depend on the prompt, so the conditional
//! and unconditional guidance branches share it.

mod layers;
mod text;
mod weights;

use serde::{Deserialize, Serialize};

pub use layers::{
    cross_attention, cross_attention_projected, decode_latent, encode_image, input_conv,
    project_prompt, self_attention, AttentionRecord, FeatureMap, ProjectedPrompt,
};
pub(crate) use layers::project;
pub use text::{text_encode, PromptEmbedding, EOT_LABEL, PAD_LABEL, SOT_LABEL};
pub use weights::{gen_weights, NetWeights, Tensor, TENSOR_NAMES, VOCAB_BUCKETS};

use crate::conditioning::{DEFAULT_LATENT_FACTOR, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::grid::{LatentGrid, MaskGrid};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub latent_channels: usize,
    /// Feature width `d` of the attention block.
    pub feature_channels: usize,
    pub text_len: usize,
    pub latent_factor: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    /// Rows in the timestep embedding table, minus one.
    pub timesteps: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            feature_channels: 64,
            text_len: 77,
            latent_factor: DEFAULT_LATENT_FACTOR,
            latent_height: 16,
            latent_width: 16,
            timesteps: DEFAULT_STEPS,
            seed: 42,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.feature_channels == 0 || self.latent_factor == 0 {
            return Err(Error::domain("channel counts and latent factor must be >= 1"));
        }
        if self.text_len < 2 {
            return Err(Error::domain(format!(
                "text_len must leave room for SOT and EOT, got {}",
                self.text_len
            )));
        }
        if self.latent_height < 4 || self.latent_width < 4 {
            return Err(Error::domain(format!(
                "latent dims must be >= 4, got {}x{}",
                self.latent_height, self.latent_width
            )));
        }
        if self.timesteps == 0 {
            return Err(Error::domain("timesteps must be >= 1"));
        }
        Ok(())
    }

    /// Pixel size of images this network accepts.
    pub fn image_size(&self) -> (usize, usize) {
        (
            self.latent_height * self.latent_factor,
            self.latent_width * self.latent_factor,
        )
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        (self.latent_channels, self.latent_height, self.latent_width)
    }
}

/// Gain on the learned part of the noise prediction.
pub const HEAD_GAIN: f64 = 0.05;

/// Prompt-independent part of one noise prediction.
#[derive(Debug, Clone)]
pub struct Trunk {
    features: FeatureMap,
    z_t: LatentGrid,
    t: usize,
}

impl Trunk {
    pub fn features(&self) -> &FeatureMap {
        &self.features
    }
}

pub fn denoise_trunk(
    z_t: &LatentGrid,
    image_cond: &LatentGrid,
    mask_cond: &MaskGrid,
    t: usize,
    weights: &NetWeights,
) -> Result<Trunk> {
    if t > weights.config.timesteps {
        return Err(Error::domain(format!(
            "timestep {t} outside [0, {}]",
            weights.config.timesteps
        )));
    }
    let h0 = input_conv(z_t, mask_cond, image_cond, weights)?;
    Ok(Trunk {
        features: self_attention(&h0, weights),
        z_t: z_t.clone(),
        t,
    })
}

/// Finish a prediction from a shared trunk for one prompt.
pub fn denoise_head(
    trunk: &Trunk,
    prompt: &ProjectedPrompt,
    weights: &NetWeights,
) -> Result<(LatentGrid, AttentionRecord)> {
    let cfg = &weights.config;
    let d = cfg.feature_channels;
    let h1 = &trunk.features;
    let (attended, record) = cross_attention_projected(h1, prompt, weights)?;
    let temb = &weights.time_embedding.data[trunk.t * d..(trunk.t + 1) * d];

    let positions = h1.positions();
    let mut h3 = Vec::with_capacity(positions * d);
    for pos in 0..positions {
        let (a, b) = (h1.row(pos), attended.row(pos));
        h3.extend((0..d).map(|k| (a[k] + b[k]) + temb[k]));
    }
    let per_position = project(&h3, d, &weights.out_proj.data, cfg.latent_channels);

    let c = cfg.latent_channels;
    let mut eps = LatentGrid::zeros(c, h1.height, h1.width);
    for pos in 0..positions {
        for k in 0..c {
            let skip = trunk.z_t.values()[k * positions + pos];
            eps.values_mut()[k * positions + pos] =
                skip + HEAD_GAIN * (per_position[pos * c + k] + weights.out_bias.data[k]);
        }
    }
    if eps.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Integrity(format!("non-finite noise prediction at t={}", trunk.t)));
    }
    Ok((eps, record))
}

/// `ε(z_t, z_c, M, t, prompt)`.
pub fn predict_noise(
    z_t: &LatentGrid,
    image_cond: &LatentGrid,
    mask_cond: &MaskGrid,
    t: usize,
    prompt: &str,
    weights: &NetWeights,
) -> Result<LatentGrid> {
    let trunk = denoise_trunk(z_t, image_cond, mask_cond, t, weights)?;
    let projected = project_prompt(&text_encode(prompt, weights), weights);
    Ok(denoise_head(&trunk, &projected, weights)?.0)
}
