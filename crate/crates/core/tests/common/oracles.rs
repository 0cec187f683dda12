//! Reference implementations used only by tests. Each one is written the
//! slow, obvious way and shares no code path with the library routine it
//! checks.
#![allow(dead_code)]

use std::f64::consts::PI;

use freecond::conditioning::{make_mask_condition, mask_image, FreeCondParams};
use freecond::grid::{LatentGrid, MaskGrid};
use freecond::rng::SplitMix64;
use freecond::sampler::{denoise_step, sample_initial_noise, SamplerSchedule};
use freecond::toynet::{decode_latent, encode_image, predict_noise, NetWeights};

/// Direct double-sum 2D DFT: `X[u][v] = Σ_x Σ_y f[x][y] e^{-2πi(ux/H + vy/W)}`.
pub fn naive_dft2(field: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for x in 0..h {
                for y in 0..w {
                    let angle = -2.0 * PI * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                    re += field[x * w + y] * angle.cos();
                    im += field[x * w + y] * angle.sin();
                }
            }
            out[u * w + v] = (re, im);
        }
    }
    out
}

/// Direct double-sum inverse, real part.
pub fn naive_idft2_real(bins: &[(f64, f64)], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for x in 0..h {
        for y in 0..w {
            let mut re = 0.0;
            for u in 0..h {
                for v in 0..w {
                    let angle = 2.0 * PI * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                    let (br, bi) = bins[u * w + v];
                    re += br * angle.cos() - bi * angle.sin();
                }
            }
            out[x * w + y] = re / (h * w) as f64;
        }
    }
    out
}

/// Signed-frequency magnitude of bin `k`: bins past the midpoint alias to
/// negative frequencies.
fn axis_frequency(k: usize, n: usize) -> f64 {
    let signed = if 2 * k <= n { k as f64 } else { k as f64 - n as f64 };
    (2.0 * PI * signed / n as f64).abs()
}

pub fn naive_lpf_channel(field: &[f64], h: usize, w: usize, gamma: f64) -> Vec<f64> {
    let mut bins = naive_dft2(field, h, w);
    for u in 0..h {
        for v in 0..w {
            if axis_frequency(u, h).max(axis_frequency(v, w)) > gamma {
                bins[u * w + v] = (0.0, 0.0);
            }
        }
    }
    naive_idft2_real(&bins, h, w)
}

pub fn brute_iou(a: &MaskGrid, b: &MaskGrid) -> f64 {
    let (h, w) = a.shape();
    let (mut inter, mut union) = (0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
            let (x, y) = (a.get(i, j) > 0.5, b.get(i, j) > 0.5);
            if x && y {
                inter += 1.0;
            }
            if x || y {
                union += 1.0;
            }
        }
    }
    inter / union
}

pub fn brute_psnr(a: &LatentGrid, b: &LatentGrid, max_value: f64) -> f64 {
    let (c, h, w) = a.shape();
    let mut sse = 0.0;
    for k in 0..c {
        for i in 0..h {
            for j in 0..w {
                let d = a.get(k, i, j) - b.get(k, i, j);
                sse += d * d;
            }
        }
    }
    let mse = sse / (c * h * w) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

/// `(1/ΣM) Σ_j M_j ⟨Q_j, k⟩`, the masked mean of the attention logits (× √d).
pub fn masked_mean_logit(q: &[f64], mask: &[f64], k: &[f64]) -> f64 {
    let d = k.len();
    let mut num = 0.0;
    for (j, m) in mask.iter().enumerate() {
        let mut logit = 0.0;
        for i in 0..d {
            logit += q[j * d + i] * k[i];
        }
        num += m * logit;
    }
    num / mask.iter().sum::<f64>()
}

pub fn random_binary_mask(h: usize, w: usize, p: f64, rng: &mut SplitMix64) -> MaskGrid {
    MaskGrid::from_fn(h, w, |_, _| rng.next_f64() < p)
}

pub fn random_latent(shape: (usize, usize, usize), rng: &mut SplitMix64) -> LatentGrid {
    LatentGrid::from_fn(shape.0, shape.1, shape.2, |_, _, _| rng.next_normal())
}

/// Plain classifier-free-guided loop on the raw image and mask conditions,
/// with no FreeCond transforms anywhere. Returns the decoded image and
/// every intermediate latent (index 0 is `z_T`).
pub fn baseline_guided_loop(
    image: &LatentGrid,
    mask: &MaskGrid,
    prompt: &str,
    w: f64,
    steps: usize,
    weights: &NetWeights,
    noise_seed: u64,
) -> (LatentGrid, Vec<LatentGrid>) {
    let cfg = &weights.config;
    let zc = encode_image(&mask_image(image, mask).unwrap(), weights).unwrap();
    let mc = make_mask_condition(mask, cfg.latent_factor).unwrap();
    let schedule = SamplerSchedule::new(steps).unwrap();
    let mut z = sample_initial_noise(cfg.latent_shape(), noise_seed);
    let mut trajectory = vec![z.clone()];
    for t in (1..=steps).rev() {
        let eps_u = predict_noise(&z, &zc, &mc, t, "", weights).unwrap();
        let eps_c = predict_noise(&z, &zc, &mc, t, prompt, weights).unwrap();
        let mut eps = eps_u.clone();
        for (e, c) in eps.values_mut().iter_mut().zip(eps_c.values()) {
            *e = (1.0 - w) * *e + w * c;
        }
        z = denoise_step(&z, &eps, t, t - 1, &schedule).unwrap();
        trajectory.push(z.clone());
    }
    (decode_latent(&z, weights).unwrap(), trajectory)
}

pub fn baseline_params() -> FreeCondParams {
    FreeCondParams::default()
}
