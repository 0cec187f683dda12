//! Deterministic guided sampling loop.
//!
//! The schedule has integer timesteps `T, T-1, …, 0` with linearly spaced
//! betas from [`BETA_START`] to [`BETA_END`] and `ᾱ_0 = 1`. Each step applies
//! the zero-variance implicit update
//!
//! ```text
//! x̂0     = (z_t − √(1−ᾱ_t) · ε̂) / √ᾱ_t
//! z_prev = √ᾱ_prev · x̂0 + √(1−ᾱ_prev) · ε̂
//! ```
//!
//! so the final step (to `t = 0`) returns the clean estimate `x̂0`.
//!
//! No background blending is performed between steps: the known region is
//! carried only through the image condition, as in a stock inpainting model.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::conditioning::{
    freecond_image, freecond_mask, make_mask_condition, mask_image, FreeCondParams,
};
use crate::error::{Error, Result};
use crate::grid::{same_shape, LatentGrid, MaskGrid};
use crate::rng::{derive_seed, SplitMix64};
use crate::toynet::{
    decode_latent, denoise_head, denoise_trunk, encode_image, project_prompt, text_encode,
    AttentionRecord, NetConfig, NetWeights,
};

pub const BETA_START: f64 = 0.002;
pub const BETA_END: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSchedule {
    steps: usize,
    /// `ᾱ_t` for `t = 0..=steps`.
    alphas_cumprod: Vec<f64>,
}

impl SamplerSchedule {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("schedule needs at least one step"));
        }
        let mut alphas_cumprod = Vec::with_capacity(steps + 1);
        alphas_cumprod.push(1.0);
        let mut acc = 1.0;
        for t in 1..=steps {
            let frac = if steps == 1 { 0.0 } else { (t - 1) as f64 / (steps - 1) as f64 };
            let beta = BETA_START + (BETA_END - BETA_START) * frac;
            acc *= 1.0 - beta;
            alphas_cumprod.push(acc);
        }
        Ok(Self { steps, alphas_cumprod })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_cumprod[t]
    }

    /// `T, T-1, …, 0`.
    pub fn timesteps(&self) -> impl Iterator<Item = usize> {
        (0..=self.steps).rev()
    }
}

/// I.i.d. standard normals for the initial latent `z_T`.
pub fn sample_initial_noise(shape: (usize, usize, usize), seed: u64) -> LatentGrid {
    let mut rng = SplitMix64::new(derive_seed(seed, "initial_noise"));
    let (c, h, w) = shape;
    LatentGrid::from_fn(c, h, w, |_, _, _| rng.next_normal())
}

/// `ε_u + w · (ε_c − ε_u)`, evaluated as `(1 − w) · ε_u + w · ε_c` so that
/// `w = 0` and `w = 1` return the corresponding input exactly.
pub fn cfg_combine(eps_uncond: &LatentGrid, eps_cond: &LatentGrid, w: f64) -> Result<LatentGrid> {
    same_shape(eps_uncond, eps_cond)?;
    let mut out = eps_uncond.clone();
    for (o, c) in out.values_mut().iter_mut().zip(eps_cond.values()) {
        *o = (1.0 - w) * *o + w * c;
    }
    Ok(out)
}

pub fn denoise_step(
    z_t: &LatentGrid,
    eps: &LatentGrid,
    t: usize,
    t_prev: usize,
    schedule: &SamplerSchedule,
) -> Result<LatentGrid> {
    if t <= t_prev {
        return Err(Error::domain(format!("timesteps must decrease, got {t} -> {t_prev}")));
    }
    if t > schedule.steps {
        return Err(Error::domain(format!("timestep {t} beyond schedule of {}", schedule.steps)));
    }
    same_shape(z_t, eps)?;
    let a_t = schedule.alpha_bar(t);
    let a_prev = schedule.alpha_bar(t_prev);
    let (sqrt_a_t, sqrt_1m_a_t) = (a_t.sqrt(), (1.0 - a_t).sqrt());
    let (sqrt_a_prev, sqrt_1m_a_prev) = (a_prev.sqrt(), (1.0 - a_prev).sqrt());

    let mut out = z_t.clone();
    for (z, e) in out.values_mut().iter_mut().zip(eps.values()) {
        let x0 = (*z - sqrt_1m_a_t * e) / sqrt_a_t;
        *z = sqrt_a_prev * x0 + sqrt_1m_a_prev * e;
    }
    Ok(out)
}

/// Reproducibility snapshot of one inpaint run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub params: FreeCondParams,
    pub net: NetConfig,
    pub noise_seed: u64,
    pub prompt: String,
    #[serde(default)]
    pub image_path: Option<String>,
    #[serde(default)]
    pub mask_path: Option<String>,
    #[serde(default)]
    pub output_path: Option<String>,
    /// The mask had no pixels to inpaint.
    pub degenerate_mask: bool,
    pub weights_checksum: String,
    pub final_latent_checksum: String,
    pub output_checksum: String,
    /// Kept out of serialized records so repeated runs write identical files.
    #[serde(skip)]
    pub wall_clock: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct InpaintOptions {
    /// Keep `z_t` after every step (index 0 is `z_T`).
    pub capture_trajectory: bool,
    /// Keep the conditional branch's cross-attention record at every step.
    pub capture_attention: bool,
}

#[derive(Debug, Clone)]
pub struct InpaintOutput {
    pub image: LatentGrid,
    pub final_latent: LatentGrid,
    pub record: RunRecord,
    pub trajectory: Vec<LatentGrid>,
    /// `(t, record)` pairs, newest last.
    pub attention: Vec<(usize, AttentionRecord)>,
}

/// Validate a 3-channel image and binary mask against the network's input size.
pub fn check_inputs(image: &LatentGrid, mask: &MaskGrid, net: &NetConfig) -> Result<()> {
    let (h, w) = net.image_size();
    if image.shape() != (3, h, w) {
        return Err(Error::dim(format!(
            "image {:?} does not match network input (3, {h}, {w})",
            image.shape()
        )));
    }
    if mask.shape() != (h, w) {
        return Err(Error::dim(format!(
            "mask {:?} does not match image {h}x{w}",
            mask.shape()
        )));
    }
    mask.require_binary("inpaint mask")
}

/// Run the full guided sampling loop with FreeCond conditions.
pub fn inpaint(
    image: &LatentGrid,
    mask: &MaskGrid,
    prompt: &str,
    params: &FreeCondParams,
    weights: &NetWeights,
    noise_seed: u64,
    options: &InpaintOptions,
) -> Result<InpaintOutput> {
    let started = std::time::Instant::now();
    params.validate()?;
    let net = &weights.config;
    if params.steps > net.timesteps {
        return Err(Error::domain(format!(
            "{} sampling steps exceed the network's {} timestep embeddings",
            params.steps, net.timesteps
        )));
    }
    check_inputs(image, mask, net)?;

    let schedule = SamplerSchedule::new(params.steps)?;
    let image_cond = encode_image(&mask_image(image, mask)?, weights)?;
    let mask_cond = make_mask_condition(mask, net.latent_factor)?;
    let mask_fc = freecond_mask(&mask_cond, params.alpha, params.beta)?;
    let cond = project_prompt(&text_encode(prompt, weights), weights);
    let uncond = project_prompt(&text_encode("", weights), weights);

    let mut z = sample_initial_noise(net.latent_shape(), noise_seed);
    let mut trajectory = Vec::new();
    let mut attention = Vec::new();
    if options.capture_trajectory {
        trajectory.push(z.clone());
    }

    let timesteps: Vec<usize> = schedule.timesteps().collect();
    for pair in timesteps.windows(2) {
        let (t, t_prev) = (pair[0], pair[1]);
        let image_fc = freecond_image(&image_cond, t, params)?;
        let trunk = denoise_trunk(&z, &image_fc, &mask_fc, t, weights)?;
        let (eps_uncond, _) = denoise_head(&trunk, &uncond, weights)?;
        let (eps_cond, record) = denoise_head(&trunk, &cond, weights)?;
        let eps = cfg_combine(&eps_uncond, &eps_cond, params.w)?;
        z = denoise_step(&z, &eps, t, t_prev, &schedule)?;
        if z.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!("latent diverged at t={t}")));
        }
        if options.capture_trajectory {
            trajectory.push(z.clone());
        }
        if options.capture_attention {
            attention.push((t, record));
        }
    }

    let output = decode_latent(&z, weights)?;
    let record = RunRecord {
        params: *params,
        net: net.clone(),
        noise_seed,
        prompt: prompt.to_string(),
        image_path: None,
        mask_path: None,
        output_path: None,
        degenerate_mask: mask.count_ones() == 0,
        weights_checksum: weights.checksum(),
        final_latent_checksum: z.checksum(),
        output_checksum: output.checksum(),
        wall_clock: started.elapsed(),
    };
    Ok(InpaintOutput {
        image: output,
        final_latent: z,
        record,
        trajectory,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> LatentGrid {
        LatentGrid::new(1, 1, 1, vec![v]).unwrap()
    }

    #[test]
    fn schedule_is_monotone() {
        let s = SamplerSchedule::new(50).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=50 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0);
        }
        let ts: Vec<usize> = s.timesteps().collect();
        assert_eq!(ts.first(), Some(&50));
        assert_eq!(ts.last(), Some(&0));
        assert!(SamplerSchedule::new(0).is_err());
    }

    #[test]
    fn initial_noise_is_seeded() {
        let a = sample_initial_noise((4, 8, 8), 42);
        assert_eq!(a, sample_initial_noise((4, 8, 8), 42));
        assert_ne!(a, sample_initial_noise((4, 8, 8), 43));
    }

    #[test]
    fn initial_noise_statistics() {
        let z = sample_initial_noise((4, 64, 64), 42);
        let n = z.values().len() as f64;
        let mean = z.values().iter().sum::<f64>() / n;
        let var = z.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn cfg_combine_cases() {
        let u = scalar(0.3);
        let c = scalar(-1.7);
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        assert_eq!(cfg_combine(&scalar(0.0), &scalar(1.0), 15.0).unwrap(), scalar(15.0));
        assert!(cfg_combine(&u, &LatentGrid::zeros(1, 2, 1), 2.0).is_err());
    }

    #[test]
    fn denoise_step_hand_evaluated() {
        let s = SamplerSchedule::new(50).unwrap();
        let (a_t, a_p) = (s.alpha_bar(50), s.alpha_bar(49));
        let (z, e) = (0.8, -0.25);
        let x0 = (z - (1.0 - a_t).sqrt() * e) / a_t.sqrt();
        let expected = a_p.sqrt() * x0 + (1.0 - a_p).sqrt() * e;
        let out = denoise_step(&scalar(z), &scalar(e), 50, 49, &s).unwrap();
        assert_eq!(out.values()[0], expected);

        assert!(matches!(denoise_step(&scalar(z), &scalar(e), 10, 10, &s), Err(Error::Domain(_))));
        assert!(denoise_step(&scalar(z), &scalar(e), 9, 10, &s).is_err());
    }

    #[test]
    fn zero_noise_prediction_rescales() {
        let s = SamplerSchedule::new(50).unwrap();
        let z_t = sample_initial_noise((1, 2, 2), 1);
        let zero = LatentGrid::zeros(1, 2, 2);
        let mut z = z_t.clone();
        for t in (1..=50).rev() {
            z = denoise_step(&z, &zero, t, t - 1, &s).unwrap();
        }
        let ratio = 1.0 / s.alpha_bar(50).sqrt();
        for (a, b) in z.values().iter().zip(z_t.values()) {
            assert!((a - ratio * b).abs() < 1e-9 * ratio.max(1.0) * b.abs().max(1.0));
        }
    }
}
