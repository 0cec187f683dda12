//! Seeded weight generation.
//!
//! Every tensor is drawn from its own SplitMix64 sub-stream, seeded from the
//! network seed and the tensor's name, as standard normals scaled by
//! `1/√fan_in`. Embedding tables are lookups (fan-in 1) and keep unit scale.
//! Each value is rounded to `f32` precision after drawing so the weights
//! survive a round trip through the `float32` tensor container unchanged.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::NetConfig;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// Hashed vocabulary buckets for ordinary words.
pub const VOCAB_BUCKETS: usize = 1024;
/// Rows reserved ahead of the buckets in the token table.
pub const SOT_ROW: usize = 0;
pub const EOT_ROW: usize = 1;
pub const PAD_ROW: usize = 2;
pub const RESERVED_ROWS: usize = 3;

/// Constant added to every decoded pixel before clamping to `[0, 1]`.
pub(crate) const DECODER_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn generate(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Self {
        let len = shape.iter().product();
        let scale = 1.0 / (fan_in as f64).sqrt();
        let mut rng = SplitMix64::new(derive_seed(seed, name));
        let data = (0..len)
            .map(|_| (rng.next_normal() * scale) as f32 as f64)
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetWeights {
    pub config: NetConfig,
    /// `[latent_channels, 3, f, f]`
    pub encoder: Tensor,
    /// `[latent_channels]`
    pub encoder_bias: Tensor,
    /// `[3, f, f, latent_channels]`
    pub decoder: Tensor,
    /// `[3]`
    pub decoder_bias: Tensor,
    /// `[d, 2·latent_channels + 1, 3, 3]`
    pub conv_in: Tensor,
    /// `[d]`
    pub conv_in_bias: Tensor,
    pub self_q: Tensor,
    pub self_k: Tensor,
    pub self_v: Tensor,
    pub self_out: Tensor,
    pub cross_q: Tensor,
    pub cross_k: Tensor,
    pub cross_v: Tensor,
    /// `[timesteps + 1, d]`
    pub time_embedding: Tensor,
    /// `[RESERVED_ROWS + VOCAB_BUCKETS, d]`
    pub token_embedding: Tensor,
    /// `[latent_channels, d]`
    pub out_proj: Tensor,
    /// `[latent_channels]`
    pub out_bias: Tensor,
}

/// Tensor names in serialization order.
pub const TENSOR_NAMES: [&str; 17] = [
    "encoder",
    "encoder_bias",
    "decoder",
    "decoder_bias",
    "conv_in",
    "conv_in_bias",
    "self_q",
    "self_k",
    "self_v",
    "self_out",
    "cross_q",
    "cross_k",
    "cross_v",
    "time_embedding",
    "token_embedding",
    "out_proj",
    "out_bias",
];

/// Shape and fan-in for each named tensor under `config`.
fn layout(config: &NetConfig, name: &str) -> (Vec<usize>, usize) {
    let c = config.latent_channels;
    let d = config.feature_channels;
    let f = config.latent_factor;
    let conv_in_channels = 2 * c + 1;
    match name {
        "encoder" => (vec![c, 3, f, f], 3 * f * f),
        "encoder_bias" => (vec![c], 3 * f * f),
        // Transposed convolution: each latent cell spreads over an f×f patch.
        "decoder" => (vec![3, f, f, c], c * f * f),
        "decoder_bias" => (vec![3], c * f * f),
        "conv_in" => (vec![d, conv_in_channels, 3, 3], conv_in_channels * 9),
        "conv_in_bias" => (vec![d], conv_in_channels * 9),
        "self_q" | "self_k" | "self_v" | "self_out" | "cross_q" | "cross_k" | "cross_v" => {
            (vec![d, d], d)
        }
        "time_embedding" => (vec![config.timesteps + 1, d], 1),
        "token_embedding" => (vec![RESERVED_ROWS + VOCAB_BUCKETS, d], 1),
        "out_proj" => (vec![c, d], d),
        "out_bias" => (vec![c], d),
        other => unreachable!("unknown tensor {other}"),
    }
}

/// Generate the weights for `config` from `config.seed`.
pub fn gen_weights(config: &NetConfig) -> Result<NetWeights> {
    config.validate()?;
    let mut tensors = TENSOR_NAMES.iter().map(|name| {
        let (shape, fan_in) = layout(config, name);
        Tensor::generate(config.seed, name, &shape, fan_in)
    });
    let mut next = || tensors.next().expect("tensor count");
    Ok(NetWeights {
        config: config.clone(),
        encoder: next(),
        encoder_bias: next(),
        decoder: next(),
        decoder_bias: next(),
        conv_in: next(),
        conv_in_bias: next(),
        self_q: next(),
        self_k: next(),
        self_v: next(),
        self_out: next(),
        cross_q: next(),
        cross_k: next(),
        cross_v: next(),
        time_embedding: next(),
        token_embedding: next(),
        out_proj: next(),
        out_bias: next(),
    })
}

impl NetWeights {
    /// Named tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let all = [
            &self.encoder,
            &self.encoder_bias,
            &self.decoder,
            &self.decoder_bias,
            &self.conv_in,
            &self.conv_in_bias,
            &self.self_q,
            &self.self_k,
            &self.self_v,
            &self.self_out,
            &self.cross_q,
            &self.cross_k,
            &self.cross_v,
            &self.time_embedding,
            &self.token_embedding,
            &self.out_proj,
            &self.out_bias,
        ];
        TENSOR_NAMES.iter().copied().zip(all).collect()
    }

    /// Rebuild weights from named tensors, checking every shape against `config`.
    pub fn from_tensors(
        config: &NetConfig,
        mut lookup: impl FnMut(&str) -> Option<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        let mut take = |name: &str| -> Result<Tensor> {
            let tensor = lookup(name)
                .ok_or_else(|| Error::Integrity(format!("missing tensor {name}")))?;
            let (shape, _) = layout(config, name);
            if tensor.shape != shape || tensor.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Integrity(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    tensor.shape
                )));
            }
            if tensor.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!("tensor {name} has non-finite values")));
            }
            Ok(tensor)
        };
        Ok(Self {
            config: config.clone(),
            encoder: take("encoder")?,
            encoder_bias: take("encoder_bias")?,
            decoder: take("decoder")?,
            decoder_bias: take("decoder_bias")?,
            conv_in: take("conv_in")?,
            conv_in_bias: take("conv_in_bias")?,
            self_q: take("self_q")?,
            self_k: take("self_k")?,
            self_v: take("self_v")?,
            self_out: take("self_out")?,
            cross_q: take("cross_q")?,
            cross_k: take("cross_k")?,
            cross_v: take("cross_v")?,
            time_embedding: take("time_embedding")?,
            token_embedding: take("token_embedding")?,
            out_proj: take("out_proj")?,
            out_bias: take("out_bias")?,
        })
    }

    /// SHA-256 over every tensor's name and little-endian `f32` payload.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in self.tensors() {
            hasher.update(name.as_bytes());
            for v in &tensor.data {
                hasher.update((*v as f32).to_le_bytes());
            }
        }
        hex(&hasher.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
