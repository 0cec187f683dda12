//! Forward layers of the toy denoiser.

use serde::{Deserialize, Serialize};

use super::text::PromptEmbedding;
use super::weights::{NetWeights, DECODER_OFFSET};
use crate::error::{Error, Result};
use crate::grid::{LatentGrid, MaskGrid};

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results do not depend on build flags.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `rows × in` inputs times the transpose of an `out × in` weight matrix.
pub(crate) fn project(input: &[f64], in_dim: usize, weight: &[f64], out_dim: usize) -> Vec<f64> {
    let rows = input.len() / in_dim;
    let mut out = Vec::with_capacity(rows * out_dim);
    for x in input.chunks_exact(in_dim) {
        for w in weight.chunks_exact(in_dim) {
            out.push(dot(x, w));
        }
    }
    out
}

/// Row-wise softmax in place, shifted by the row maximum.
fn softmax_rows(scores: &mut [f64], cols: usize) {
    for row in scores.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

/// `softmax(Q Kᵀ / √d)` for `Q: n × d`, `K: m × d`.
fn attention_probs(queries: &[f64], keys: &[f64], dim: usize) -> Vec<f64> {
    let m = keys.len() / dim;
    let scale = 1.0 / (dim as f64).sqrt();
    let mut scores = Vec::with_capacity(queries.len() / dim * m);
    for q in queries.chunks_exact(dim) {
        for k in keys.chunks_exact(dim) {
            scores.push(dot(q, k) * scale);
        }
    }
    softmax_rows(&mut scores, m);
    scores
}

/// `probs · V` for `probs: n × m`, `V: m × d`.
fn mix_values(probs: &[f64], values: &[f64], dim: usize) -> Vec<f64> {
    let m = values.len() / dim;
    let mut out = vec![0.0; probs.len() / m * dim];
    for (row, weights) in out.chunks_exact_mut(dim).zip(probs.chunks_exact(m)) {
        for (&a, v) in weights.iter().zip(values.chunks_exact(dim)) {
            for (o, x) in row.iter_mut().zip(v) {
                *o += a * x;
            }
        }
    }
    out
}

/// Feature field with `channels` features at each of `height × width`
/// positions, stored position-major (`data[pos · channels + ch]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, ch: usize, i: usize, j: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + ch]
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.data[pos * self.channels..(pos + 1) * self.channels]
    }
}

/// Everything a cross-attention call exposes for analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub height: usize,
    pub width: usize,
    pub text_len: usize,
    /// `positions × text_len`; each row sums to one.
    pub probs: Vec<f64>,
    /// `positions × d` query vectors.
    pub queries: Vec<f64>,
    pub dim: usize,
}

/// Prompt keys and values, computed once per prompt.
#[derive(Debug, Clone)]
pub struct ProjectedPrompt {
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
    pub text_len: usize,
}

pub fn project_prompt(prompt: &PromptEmbedding, weights: &NetWeights) -> ProjectedPrompt {
    let d = weights.config.feature_channels;
    ProjectedPrompt {
        keys: project(&prompt.tokens, d, &weights.cross_k.data, d),
        values: project(&prompt.tokens, d, &weights.cross_v.data, d),
        text_len: prompt.len(),
    }
}

/// Stride-`f` affine projection of a 3-channel image to the latent grid.
pub fn encode_image(image: &LatentGrid, weights: &NetWeights) -> Result<LatentGrid> {
    let cfg = &weights.config;
    let f = cfg.latent_factor;
    let (ch, h, w) = image.shape();
    if ch != 3 {
        return Err(Error::dim(format!("encoder expects a 3-channel image, got {ch}")));
    }
    if h % f != 0 || w % f != 0 {
        return Err(Error::dim(format!("image {h}x{w} is not divisible by latent factor {f}")));
    }
    let (lh, lw) = (h / f, w / f);
    let kernel = 3 * f * f;
    let mut patch = vec![0.0; kernel];
    let mut out = LatentGrid::zeros(cfg.latent_channels, lh, lw);
    for i in 0..lh {
        for j in 0..lw {
            let mut k = 0;
            for c in 0..3 {
                for di in 0..f {
                    for dj in 0..f {
                        patch[k] = image.get(c, i * f + di, j * f + dj);
                        k += 1;
                    }
                }
            }
            for c in 0..cfg.latent_channels {
                let wrow = &weights.encoder.data[c * kernel..(c + 1) * kernel];
                out.values_mut()[(c * lh + i) * lw + j] = weights.encoder_bias.data[c] + dot(&patch, wrow);
            }
        }
    }
    Ok(out)
}

/// Transposed stride-`f` projection back to a 3-channel image in `[0, 1]`.
pub fn decode_latent(z: &LatentGrid, weights: &NetWeights) -> Result<LatentGrid> {
    let cfg = &weights.config;
    let f = cfg.latent_factor;
    let (c, lh, lw) = z.shape();
    if c != cfg.latent_channels {
        return Err(Error::dim(format!(
            "decoder expects {} latent channels, got {c}",
            cfg.latent_channels
        )));
    }
    let mut cell = vec![0.0; c];
    let mut out = LatentGrid::zeros(3, lh * f, lw * f);
    let (h, w) = (lh * f, lw * f);
    for i in 0..lh {
        for j in 0..lw {
            for (k, v) in cell.iter_mut().enumerate() {
                *v = z.get(k, i, j);
            }
            for ch in 0..3 {
                for di in 0..f {
                    for dj in 0..f {
                        let base = ((ch * f + di) * f + dj) * c;
                        let v = DECODER_OFFSET
                            + weights.decoder_bias.data[ch]
                            + dot(&cell, &weights.decoder.data[base..base + c]);
                        out.values_mut()[(ch * h + i * f + di) * w + j * f + dj] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `Φ₀(Concat([z_t, M, z_c]))`: a 3×3 same-size affine convolution.
pub fn input_conv(
    z_t: &LatentGrid,
    mask_cond: &MaskGrid,
    image_cond: &LatentGrid,
    weights: &NetWeights,
) -> Result<FeatureMap> {
    let cfg = &weights.config;
    let (c, h, w) = z_t.shape();
    if c != cfg.latent_channels {
        return Err(Error::dim(format!(
            "z_t has {c} channels, network expects {}",
            cfg.latent_channels
        )));
    }
    if image_cond.shape() != z_t.shape() {
        return Err(Error::dim(format!(
            "image condition {:?} does not match z_t {:?}",
            image_cond.shape(),
            z_t.shape()
        )));
    }
    if mask_cond.shape() != (h, w) {
        return Err(Error::dim(format!(
            "mask condition {:?} does not match latent {h}x{w}",
            mask_cond.shape()
        )));
    }

    let in_ch = 2 * c + 1;
    let channel_value = |k: usize, i: usize, j: usize| -> f64 {
        if k < c {
            z_t.get(k, i, j)
        } else if k == c {
            mask_cond.get(i, j)
        } else {
            image_cond.get(k - c - 1, i, j)
        }
    };

    let d = cfg.feature_channels;
    let kernel = in_ch * 9;
    let mut patch = vec![0.0; kernel];
    let mut data = Vec::with_capacity(h * w * d);
    for i in 0..h {
        for j in 0..w {
            let mut idx = 0;
            for k in 0..in_ch {
                for di in 0..3 {
                    for dj in 0..3 {
                        let (si, sj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                        patch[idx] = if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                            channel_value(k, si as usize, sj as usize)
                        } else {
                            0.0
                        };
                        idx += 1;
                    }
                }
            }
            for o in 0..d {
                let wrow = &weights.conv_in.data[o * kernel..(o + 1) * kernel];
                data.push(weights.conv_in_bias.data[o] + dot(&patch, wrow));
            }
        }
    }
    Ok(FeatureMap {
        channels: d,
        height: h,
        width: w,
        data,
    })
}

/// Residual single-head self-attention over spatial positions.
pub fn self_attention(h: &FeatureMap, weights: &NetWeights) -> FeatureMap {
    let d = h.channels;
    let q = project(&h.data, d, &weights.self_q.data, d);
    let k = project(&h.data, d, &weights.self_k.data, d);
    let v = project(&h.data, d, &weights.self_v.data, d);
    let probs = attention_probs(&q, &k, d);
    let mixed = mix_values(&probs, &v, d);
    let update = project(&mixed, d, &weights.self_out.data, d);
    let data = h.data.iter().zip(&update).map(|(a, b)| a + b).collect();
    FeatureMap { data, ..*h }
}

/// Cross-attention of spatial queries against projected prompt tokens.
///
/// Returns `Softmax(Q Kᵀ/√d) V` (before any residual) and the record of the
/// attention matrix and queries.
pub fn cross_attention_projected(
    h: &FeatureMap,
    prompt: &ProjectedPrompt,
    weights: &NetWeights,
) -> Result<(FeatureMap, AttentionRecord)> {
    let d = weights.config.feature_channels;
    if h.channels != d {
        return Err(Error::dim(format!("features have {} channels, expected {d}", h.channels)));
    }
    let queries = project(&h.data, d, &weights.cross_q.data, d);
    let probs = attention_probs(&queries, &prompt.keys, d);
    let mixed = mix_values(&probs, &prompt.values, d);
    let record = AttentionRecord {
        height: h.height,
        width: h.width,
        text_len: prompt.text_len,
        probs,
        queries,
        dim: d,
    };
    Ok((
        FeatureMap {
            channels: d,
            height: h.height,
            width: h.width,
            data: mixed,
        },
        record,
    ))
}

pub fn cross_attention(
    h: &FeatureMap,
    prompt: &PromptEmbedding,
    weights: &NetWeights,
) -> Result<(FeatureMap, AttentionRecord)> {
    cross_attention_projected(h, &project_prompt(prompt, weights), weights)
}
