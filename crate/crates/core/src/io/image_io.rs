//! 8-bit PNG and PGM/PPM images. Pixel values map to `[0, 1]`; masks
//! binarize at 128.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::grid::{LatentGrid, MaskGrid};

fn read_dynamic(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Load an image as a 3-channel grid in `[0, 1]`. Grayscale files are
/// replicated across channels.
pub fn load_image(path: &Path) -> Result<LatentGrid> {
    let rgb = read_dynamic(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(LatentGrid::from_fn(3, h, w, |c, i, j| {
        rgb.get_pixel(j as u32, i as u32)[c] as f64 / 255.0
    }))
}

/// Load a grayscale mask; pixels `>= 128` become 1.
pub fn load_mask(path: &Path) -> Result<MaskGrid> {
    let gray = read_dynamic(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(MaskGrid::from_fn(h, w, |i, j| gray.get_pixel(j as u32, i as u32)[0] >= 128))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm" | "ppm" | "pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            message: "expected a .png, .pgm or .ppm extension".into(),
        }),
    }
}

fn write_dynamic(path: &Path, img: DynamicImage) -> Result<()> {
    let format = format_for(path)?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, format).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    atomic_write(path, &buf.into_inner())
}

/// Save a 1- or 3-channel grid (values clamped to `[0, 1]`).
pub fn save_image(path: &Path, grid: &LatentGrid) -> Result<()> {
    let (c, h, w) = grid.shape();
    let img = match c {
        1 => DynamicImage::ImageLuma8(GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([to_byte(grid.get(0, y as usize, x as usize))])
        })),
        3 => DynamicImage::ImageRgb8(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (i, j) = (y as usize, x as usize);
            image::Rgb([to_byte(grid.get(0, i, j)), to_byte(grid.get(1, i, j)), to_byte(grid.get(2, i, j))])
        })),
        _ => return Err(Error::dim(format!("cannot save a {c}-channel grid as an image"))),
    };
    write_dynamic(path, img)
}

/// Save a mask as 8-bit grayscale; values are clamped to `[0, 1]` first.
pub fn save_mask(path: &Path, mask: &MaskGrid) -> Result<()> {
    let (h, w) = mask.shape();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([to_byte(mask.get(y as usize, x as usize))])
    });
    write_dynamic(path, DynamicImage::ImageLuma8(img))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = MaskGrid::from_fn(5, 7, |i, j| (i * j) % 3 == 1);
        for name in ["m.png", "m.pgm"] {
            let path = dir.path().join(name);
            save_mask(&path, &mask).unwrap();
            assert_eq!(load_mask(&path).unwrap(), mask);
        }

        let image = LatentGrid::from_fn(3, 4, 4, |c, i, j| ((c * 16 + i * 4 + j) * 5) as f64 / 255.0);
        let path = dir.path().join("img.png");
        save_image(&path, &image).unwrap();
        let back = load_image(&path).unwrap();
        assert!(back.max_abs_diff(&image).unwrap() < 1e-12);
    }

    #[test]
    fn threshold_at_128() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = GrayImage::from_fn(2, 1, |x, _| image::Luma([if x == 0 { 127 } else { 128 }]));
        img.save(&path).unwrap();
        assert_eq!(load_mask(&path).unwrap().values(), &[0.0, 1.0]);
    }

    #[test]
    fn unknown_extension_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(save_mask(&dir.path().join("m.bmp"), &MaskGrid::zeros(2, 2)).is_err());
        assert!(matches!(load_mask(&dir.path().join("missing.png")), Err(Error::Io { .. })));
    }
}
