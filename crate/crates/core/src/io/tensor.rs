//! Tensor container: one JSON header line, then a little-endian `f32`
//! payload in row-major order (channel-major for grids).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::toynet::{NetConfig, NetWeights, Tensor, TENSOR_NAMES};

pub const TENSOR_FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "float32";
const LAYOUT: &str = "row-major channel-major";
const ENDIANNESS: &str = "little";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub format_version: u32,
    pub dtype: String,
    pub layout: String,
    pub endianness: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl TensorHeader {
    pub fn new(shape: &[usize], meta: Option<serde_json::Value>) -> Self {
        Self {
            format_version: TENSOR_FORMAT_VERSION,
            dtype: DTYPE.into(),
            layout: LAYOUT.into(),
            endianness: ENDIANNESS.into(),
            shape: shape.to_vec(),
            meta,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Serialize values (rounded to `f32`) under a header for `shape`.
pub fn encode_tensor(shape: &[usize], values: &[f64], meta: Option<serde_json::Value>) -> Result<Vec<u8>> {
    let header = TensorHeader::new(shape, meta);
    if header.element_count() != values.len() {
        return Err(Error::dim(format!(
            "shape {shape:?} holds {} values, got {}",
            header.element_count(),
            values.len()
        )));
    }
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.reserve(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(bytes)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(TensorHeader, Vec<f32>)> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Integrity("tensor header line is not terminated".into()))?;
    let header: TensorHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Integrity(format!("bad tensor header: {e}")))?;
    if header.format_version != TENSOR_FORMAT_VERSION
        || header.dtype != DTYPE
        || header.endianness != ENDIANNESS
        || header.layout != LAYOUT
    {
        return Err(Error::Integrity(format!(
            "unsupported tensor encoding: version {}, {} {} {}",
            header.format_version, header.dtype, header.endianness, header.layout
        )));
    }
    let payload = &bytes[newline + 1..];
    let expected = header.element_count() * 4;
    if payload.len() != expected {
        return Err(Error::Integrity(format!(
            "payload is {} bytes, shape {:?} needs {expected}",
            payload.len(),
            header.shape
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, values))
}

pub fn save_tensor(path: &Path, shape: &[usize], values: &[f64], meta: Option<serde_json::Value>) -> Result<()> {
    atomic_write(path, &encode_tensor(shape, values, meta)?)
}

pub fn load_tensor(path: &Path) -> Result<(TensorHeader, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| match e {
        Error::Integrity(msg) => Error::Integrity(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    /// SHA-256 of the whole tensor file.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: NetConfig,
    pub weights_checksum: String,
    pub tensors: Vec<ManifestEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write one tensor file per weight plus `manifest.json` into `dir`.
pub fn save_weights(dir: &Path, weights: &NetWeights) -> Result<WeightManifest> {
    let mut entries = Vec::new();
    for (name, tensor) in weights.tensors() {
        let meta = serde_json::json!({
            "tensor": name,
            "seed": weights.config.seed,
            "config": weights.config,
        });
        let bytes = encode_tensor(&tensor.shape, &tensor.data, Some(meta))?;
        let file = format!("{name}.tensor");
        atomic_write(&dir.join(&file), &bytes)?;
        entries.push(ManifestEntry {
            name: name.to_string(),
            file,
            shape: tensor.shape.clone(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = WeightManifest {
        format_version: TENSOR_FORMAT_VERSION,
        seed: weights.config.seed,
        config: weights.config.clone(),
        weights_checksum: weights.checksum(),
        tensors: entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    atomic_write(&dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

/// Load a weight set written by [`save_weights`], verifying every checksum.
pub fn load_weights(dir: &Path) -> Result<NetWeights> {
    let manifest_path = dir.join("manifest.json");
    let raw = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: WeightManifest = serde_json::from_slice(&raw).map_err(|e| Error::Format {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;

    let mut loaded = std::collections::HashMap::new();
    for entry in &manifest.tensors {
        let path = dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (header, values) = decode_tensor(&bytes)
            .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Integrity(format!("{}: checksum mismatch", path.display())));
        }
        if header.shape != entry.shape {
            return Err(Error::Integrity(format!("{}: shape differs from manifest", path.display())));
        }
        let tensor = Tensor {
            shape: header.shape,
            data: values.into_iter().map(f64::from).collect(),
        };
        loaded.insert(entry.name.clone(), tensor);
    }
    if let Some(missing) = TENSOR_NAMES.iter().find(|n| !loaded.contains_key(**n)) {
        return Err(Error::Integrity(format!("manifest lacks tensor {missing}")));
    }
    let weights = NetWeights::from_tensors(&manifest.config, |name| loaded.remove(name))?;
    if weights.checksum() != manifest.weights_checksum {
        return Err(Error::Integrity("weights checksum does not match manifest".into()));
    }
    Ok(weights)
}
