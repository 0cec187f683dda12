//! File formats: the tensor container, weight sets, images and masks.

mod image_io;
mod tensor;

pub use image_io::{load_image, load_mask, save_image, save_mask};
pub use tensor::{
    decode_tensor, encode_tensor, load_tensor, load_weights, save_tensor, save_weights,
    TensorHeader, WeightManifest, ManifestEntry, TENSOR_FORMAT_VERSION,
};

use std::path::Path;

use crate::error::{Error, Result};

/// Write through a sibling temp file and rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => tmp_name.into(),
    };
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
