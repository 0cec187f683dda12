//! Toy prompt encoder: whitespace tokens hashed into an embedding table.
//!
//! The layout is `[SOT, word…, EOT, PAD…]`, truncated so EOT always fits.
//! Words are lowercased before hashing and there is no positional signal, so
//! a word's row is the same wherever it appears.

use serde::{Deserialize, Serialize};

use super::weights::{NetWeights, EOT_ROW, PAD_ROW, RESERVED_ROWS, SOT_ROW, VOCAB_BUCKETS};
use crate::rng::fnv1a64;

pub const SOT_LABEL: &str = "<SOT>";
pub const EOT_LABEL: &str = "<EOT>";
pub const PAD_LABEL: &str = "<PAD>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    /// `text_len × d`, row-major.
    pub tokens: Vec<f64>,
    pub token_labels: Vec<String>,
    pub dim: usize,
}

impl PromptEmbedding {
    pub fn len(&self) -> usize {
        self.token_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_labels.is_empty()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.tokens[index * self.dim..(index + 1) * self.dim]
    }
}

fn word_row(word: &str) -> usize {
    RESERVED_ROWS + (fnv1a64(word.as_bytes()) % VOCAB_BUCKETS as u64) as usize
}

pub fn text_encode(prompt: &str, weights: &NetWeights) -> PromptEmbedding {
    let text_len = weights.config.text_len;
    let dim = weights.config.feature_channels;

    let mut rows = vec![SOT_ROW];
    let mut labels = vec![SOT_LABEL.to_string()];
    for word in prompt.split_whitespace().take(text_len - 2) {
        let word = word.to_lowercase();
        rows.push(word_row(&word));
        labels.push(word);
    }
    rows.push(EOT_ROW);
    labels.push(EOT_LABEL.to_string());
    while rows.len() < text_len {
        rows.push(PAD_ROW);
        labels.push(PAD_LABEL.to_string());
    }

    let table = &weights.token_embedding.data;
    let mut tokens = Vec::with_capacity(text_len * dim);
    for row in rows {
        tokens.extend_from_slice(&table[row * dim..(row + 1) * dim]);
    }
    PromptEmbedding {
        tokens,
        token_labels: labels,
        dim,
    }
}
