//! Channel-influence analysis of the cross-attention query, attention-map
//! extraction and mask-placement bookkeeping.

use std::fmt;
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::conditioning::{make_mask_condition, mask_image, FreeCondParams};
use crate::error::{Error, Result};
use crate::grid::{complement, shift, LatentGrid, MaskGrid};
use crate::sampler::{check_inputs, inpaint, sample_initial_noise, InpaintOptions, InpaintOutput, RunRecord};
use crate::toynet::{
    encode_image, input_conv, project, self_attention, text_encode, AttentionRecord, NetWeights,
};

/// Per-channel masked mean of `Q_j ⊙ k`:
/// `CI_i = Σ_j (Q_j ⊙ k)_i · M̄_j / Σ_j M̄_j`.
///
/// `queries` is `positions × k.len()` row-major and `mask` has one weight per
/// position.
pub fn channel_influence(queries: &[f64], mask: &[f64], key: &[f64]) -> Result<Vec<f64>> {
    let dim = key.len();
    if dim == 0 || queries.len() != mask.len() * dim {
        return Err(Error::dim(format!(
            "{} query values do not form {} positions of width {dim}",
            queries.len(),
            mask.len()
        )));
    }
    let total: f64 = mask.iter().sum();
    if total <= 0.0 {
        return Err(Error::domain("empty region: mask weights sum to zero"));
    }
    let mut ci = vec![0.0; dim];
    for (q, &m) in queries.chunks_exact(dim).zip(mask) {
        if m == 0.0 {
            continue;
        }
        for ((c, qi), ki) in ci.iter_mut().zip(q).zip(key) {
            *c += (qi * ki) * m;
        }
    }
    for c in &mut ci {
        *c /= total;
    }
    Ok(ci)
}

/// `CI(Q_l, M, k) − CI(Q_n, M, k)`, both measured over the same region.
pub fn delta_ci(query_l: &[f64], query_n: &[f64], region: &[f64], key: &[f64]) -> Result<Vec<f64>> {
    let with_mask = channel_influence(query_l, region, key)?;
    let without = channel_influence(query_n, region, key)?;
    Ok(with_mask.iter().zip(&without).map(|(a, b)| a - b).collect())
}

/// Where the query is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiLayer {
    /// `W_Q · Φ0(…)`, the input-layer query.
    #[default]
    InputConv,
    /// The query seen by the denoiser's cross-attention, after self-attention.
    CrossAttention,
}

impl CiLayer {
    pub fn id(self) -> &'static str {
        match self {
            CiLayer::InputConv => "input_conv",
            CiLayer::CrossAttention => "cross_attention",
        }
    }
}

impl std::str::FromStr for CiLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input_conv" => Ok(CiLayer::InputConv),
            "cross_attention" => Ok(CiLayer::CrossAttention),
            other => Err(Error::domain(format!("unknown layer {other:?}"))),
        }
    }
}

/// Query matrix (`positions × d`) for one set of conditions.
pub fn query_matrix(
    z_t: &LatentGrid,
    mask_cond: &MaskGrid,
    image_cond: &LatentGrid,
    weights: &NetWeights,
    layer: CiLayer,
) -> Result<Vec<f64>> {
    let d = weights.config.feature_channels;
    let mut h = input_conv(z_t, mask_cond, image_cond, weights)?;
    if layer == CiLayer::CrossAttention {
        h = self_attention(&h, weights);
    }
    Ok(project(&h.data, d, &weights.cross_q.data, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    InsideMask,
    OutsideMask,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::InsideMask => "inside",
            Region::OutsideMask => "outside",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CIReport {
    pub layer: String,
    pub t: usize,
    pub token_index: usize,
    pub token_label: String,
    pub region: Region,
    /// CI of the masked run, one value per feature channel.
    pub ci: Vec<f64>,
    /// CI of the masked run minus CI of the companion run.
    pub delta_ci: Vec<f64>,
}

impl CIReport {
    /// Sums of `ci` and `delta_ci` over a channel range.
    pub fn sum_channels(&self, channels: Range<usize>) -> (f64, f64) {
        let end = channels.end.min(self.ci.len());
        let start = channels.start.min(end);
        (
            self.ci[start..end].iter().sum(),
            self.delta_ci[start..end].iter().sum(),
        )
    }
}

/// Inputs for the paired ΔCI analysis at `t = T`.
#[derive(Debug, Clone)]
pub struct CiRequest<'a> {
    pub image: &'a LatentGrid,
    /// The mask under study, `M^l`.
    pub mask: &'a MaskGrid,
    /// Companion mask `M^n`; the all-zero mask when `None`.
    pub companion: Option<&'a MaskGrid>,
    pub prompt: &'a str,
    pub noise_seed: u64,
    pub steps: usize,
    pub layer: CiLayer,
    /// Token indices to report; every token when `None`.
    pub tokens: Option<Vec<usize>>,
}

/// Paired ΔCI analysis: both runs share `z_T`; CI is evaluated over the
/// latent mask of `M^l` (inside) and its complement (outside) for both.
pub fn ci_report(req: &CiRequest<'_>, weights: &NetWeights) -> Result<Vec<CIReport>> {
    let net = &weights.config;
    check_inputs(req.image, req.mask, net)?;
    let zero = MaskGrid::zeros(req.mask.height(), req.mask.width());
    let companion = req.companion.unwrap_or(&zero);
    check_inputs(req.image, companion, net)?;
    if req.steps > net.timesteps {
        return Err(Error::domain(format!("t = {} exceeds the network's timesteps", req.steps)));
    }

    let z_t = sample_initial_noise(net.latent_shape(), req.noise_seed);
    let mask_l = make_mask_condition(req.mask, net.latent_factor)?;
    let mask_n = make_mask_condition(companion, net.latent_factor)?;
    let cond_l = encode_image(&mask_image(req.image, req.mask)?, weights)?;
    let cond_n = encode_image(&mask_image(req.image, companion)?, weights)?;
    let q_l = query_matrix(&z_t, &mask_l, &cond_l, weights, req.layer)?;
    let q_n = query_matrix(&z_t, &mask_n, &cond_n, weights, req.layer)?;

    let prompt = text_encode(req.prompt, weights);
    let d = net.feature_channels;
    let keys = project(&prompt.tokens, d, &weights.cross_k.data, d);
    let tokens: Vec<usize> = match &req.tokens {
        Some(list) => list.clone(),
        None => (0..prompt.len()).collect(),
    };

    let inside = mask_l;
    let outside = complement(&inside)?;
    let mut reports = Vec::with_capacity(tokens.len() * 2);
    for &token in &tokens {
        if token >= prompt.len() {
            return Err(Error::domain(format!(
                "token index {token} out of range for text length {}",
                prompt.len()
            )));
        }
        let key = &keys[token * d..(token + 1) * d];
        for (region, grid) in [(Region::InsideMask, &inside), (Region::OutsideMask, &outside)] {
            reports.push(CIReport {
                layer: req.layer.id().to_string(),
                t: req.steps,
                token_index: token,
                token_label: prompt.token_labels[token].clone(),
                region,
                ci: channel_influence(&q_l, grid.values(), key)?,
                delta_ci: delta_ci(&q_l, &q_n, grid.values(), key)?,
            });
        }
    }
    Ok(reports)
}

pub const CI_CSV_HEADER: [&str; 8] = [
    "layer",
    "t",
    "token_index",
    "token_label",
    "region",
    "channel",
    "ci",
    "delta_ci",
];

/// One row per (report, channel).
pub fn write_ci_csv<W: Write>(reports: &[CIReport], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Integrity(format!("csv write failed: {e}"));
    writer.write_record(CI_CSV_HEADER).map_err(wrap)?;
    for r in reports {
        for (channel, (ci, delta)) in r.ci.iter().zip(&r.delta_ci).enumerate() {
            writer
                .write_record([
                    r.layer.clone(),
                    r.t.to_string(),
                    r.token_index.to_string(),
                    r.token_label.clone(),
                    r.region.to_string(),
                    channel.to_string(),
                    ci.to_string(),
                    delta.to_string(),
                ])
                .map_err(wrap)?;
        }
    }
    writer.flush().map_err(|e| Error::Integrity(format!("csv flush failed: {e}")))
}

/// Attention paid to one token at every spatial position, as a grid.
pub fn extract_attention_map(record: &AttentionRecord, token: usize) -> Result<MaskGrid> {
    if token >= record.text_len {
        return Err(Error::domain(format!(
            "token index {token} out of range for text length {}",
            record.text_len
        )));
    }
    let values = record
        .probs
        .chunks_exact(record.text_len)
        .map(|row| row[token])
        .collect();
    MaskGrid::new(record.height, record.width, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPlacement {
    NotMasked,
    PartiallyMasked,
    FullyMasked,
}

/// Classify how much of an object the inpaint mask covers.
pub fn mask_placement_classify(object: &MaskGrid, inpaint_mask: &MaskGrid) -> Result<MaskPlacement> {
    if object.shape() != inpaint_mask.shape() {
        return Err(Error::dim(format!(
            "object mask {:?} and inpaint mask {:?} differ",
            object.shape(),
            inpaint_mask.shape()
        )));
    }
    object.require_binary("object mask")?;
    inpaint_mask.require_binary("inpaint mask")?;
    let area = object.count_ones();
    if area == 0 {
        return Err(Error::domain("object mask is empty"));
    }
    let covered = object
        .values()
        .iter()
        .zip(inpaint_mask.values())
        .filter(|(o, m)| **o == 1.0 && **m == 1.0)
        .count();
    Ok(if covered == 0 {
        MaskPlacement::NotMasked
    } else if covered == area {
        MaskPlacement::FullyMasked
    } else {
        MaskPlacement::PartiallyMasked
    })
}

/// Paired records of an original-vs-shifted mask run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftExperiment {
    pub dx: i64,
    pub dy: i64,
    pub original: RunRecord,
    pub shifted: RunRecord,
    #[serde(default)]
    pub placement_original: Option<MaskPlacement>,
    #[serde(default)]
    pub placement_shifted: Option<MaskPlacement>,
}

#[derive(Debug, Clone)]
pub struct ShiftRun {
    pub experiment: ShiftExperiment,
    pub original: InpaintOutput,
    pub shifted: InpaintOutput,
    pub shifted_mask: MaskGrid,
}

/// Inpaint with the mask and with the mask translated by `(dx, dy)`, sharing
/// every seed.
#[allow(clippy::too_many_arguments)]
pub fn run_shift_experiment(
    image: &LatentGrid,
    mask: &MaskGrid,
    object_mask: Option<&MaskGrid>,
    prompt: &str,
    (dx, dy): (i64, i64),
    params: &FreeCondParams,
    weights: &NetWeights,
    noise_seed: u64,
) -> Result<ShiftRun> {
    let shifted_mask = shift(mask, dx, dy)?;
    if shifted_mask.count_ones() == 0 {
        return Err(Error::domain(format!("mask shifted by ({dx}, {dy}) is empty")));
    }
    let options = InpaintOptions::default();
    let original = inpaint(image, mask, prompt, params, weights, noise_seed, &options)?;
    let shifted = inpaint(image, &shifted_mask, prompt, params, weights, noise_seed, &options)?;
    let (placement_original, placement_shifted) = match object_mask {
        Some(obj) => (
            Some(mask_placement_classify(obj, mask)?),
            Some(mask_placement_classify(obj, &shifted_mask)?),
        ),
        None => (None, None),
    };
    Ok(ShiftRun {
        experiment: ShiftExperiment {
            dx,
            dy,
            original: original.record.clone(),
            shifted: shifted.record.clone(),
            placement_original,
            placement_shifted,
        },
        original,
        shifted,
        shifted_mask,
    })
}
