//! Inpainting conditions: the masked image, the latent-resolution mask, and
//! their FreeCond variants.
//!
//! Timesteps live on the scheduler's integer scale `0..=T` and decrease while
//! sampling, so "early" steps are large `t`. The low-pass image condition is
//! used while `t >= t_fc`; the scaled mask condition is used at every step and
//! in both guidance branches.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq::lpf;
use crate::grid::{complement, downsample_nearest, hadamard_mask, LatentGrid, MaskGrid};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_LATENT_FACTOR: usize = 4;

/// The `(w, α, β, γ, t_fc)` tuple plus the scheduler length `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeCondParams {
    /// Classifier-free guidance scale.
    pub w: f64,
    /// Scale applied inside the mask.
    pub alpha: f64,
    /// Value given to the region outside the mask.
    pub beta: f64,
    /// Low-pass cutoff in radians, `[0, π]`.
    pub gamma: f64,
    /// Low-pass is active for `t >= t_fc`.
    pub t_fc: usize,
    /// Total scheduler timesteps.
    pub steps: usize,
}

impl Default for FreeCondParams {
    /// The baseline configuration `(15, 1, 0, π, 0)` with `T = 50`.
    fn default() -> Self {
        Self {
            w: 15.0,
            alpha: 1.0,
            beta: 0.0,
            gamma: PI,
            t_fc: 0,
            steps: DEFAULT_STEPS,
        }
    }
}

impl FreeCondParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Domain(msg)) };
        check(self.w.is_finite() && self.w >= 0.0, format!("w must be >= 0, got {}", self.w))?;
        check(
            self.alpha.is_finite() && self.alpha >= 0.0,
            format!("alpha must be >= 0, got {}", self.alpha),
        )?;
        check(
            self.beta.is_finite() && self.beta >= 0.0,
            format!("beta must be >= 0, got {}", self.beta),
        )?;
        check(
            (0.0..=PI).contains(&self.gamma),
            format!("gamma outside [0, π]: {}", self.gamma),
        )?;
        check(self.steps >= 1, "steps must be >= 1".to_string())?;
        check(
            self.t_fc <= self.steps,
            format!("t_fc must lie in [0, {}], got {}", self.steps, self.t_fc),
        )
    }

    /// True when both conditions pass through unchanged.
    pub fn is_identity(&self) -> bool {
        self.alpha == 1.0 && self.beta == 0.0 && self.gamma == PI
    }
}

/// `(1 - M) ⊙ I` for a multi-channel image.
pub fn mask_image(image: &LatentGrid, mask: &MaskGrid) -> Result<LatentGrid> {
    let keep = complement(mask)?;
    hadamard_mask(image, &keep)
}

/// Latent-resolution mask condition by nearest-neighbour downsampling.
pub fn make_mask_condition(mask: &MaskGrid, latent_factor: usize) -> Result<MaskGrid> {
    downsample_nearest(mask, latent_factor)
}

/// `α · Mc + β · (1 - Mc)`.
pub fn freecond_mask(mask_cond: &MaskGrid, alpha: f64, beta: f64) -> Result<MaskGrid> {
    mask_cond.require_binary("mask condition")?;
    if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) {
        return Err(Error::domain(format!(
            "alpha and beta must be finite and >= 0, got ({alpha}, {beta})"
        )));
    }
    let values = mask_cond
        .values()
        .iter()
        .map(|&m| alpha * m + beta * (1.0 - m))
        .collect();
    MaskGrid::new(mask_cond.height(), mask_cond.width(), values)
}

/// Image condition for timestep `t`: low-passed while `t >= t_fc`, raw below.
pub fn freecond_image(zc: &LatentGrid, t: usize, params: &FreeCondParams) -> Result<LatentGrid> {
    if t > params.steps {
        return Err(Error::domain(format!(
            "timestep {t} outside [0, {}]",
            params.steps
        )));
    }
    if t >= params.t_fc {
        lpf(zc, params.gamma)
    } else {
        Ok(zc.clone())
    }
}
