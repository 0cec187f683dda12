//! Scalar-field containers and binary mask morphology.
//!
//! A [`MaskGrid`] is a single-channel `height × width` field of non-negative
//! values; binary masks hold exactly `0.0` or `1.0`, while scaled mask
//! conditions reuse the same type with arbitrary non-negative values. A
//! [`LatentGrid`] is a `channels × height × width` field stored channel-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl MaskGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim(format!("mask must be non-empty, got {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::dim(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::domain(format!("mask values must be finite and >= 0, found {v}")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1.0)
    }

    fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Build a binary mask from a predicate over `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for i in 0..height {
            for j in 0..width {
                if f(i, j) {
                    m.values[i * width + j] = 1.0;
                }
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Row-major values; this is also the flattened mask used by the
    /// channel-influence indicator.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub(crate) fn require_binary(&self, what: &str) -> Result<()> {
        if self.is_binary() {
            Ok(())
        } else {
            Err(Error::domain(format!("{what} must be a binary mask (values 0 or 1)")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl LatentGrid {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "grid dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::dim(format!(
                "grid {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity("grid contains a non-finite value".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut g = Self::zeros(channels, height, width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    g.values[(c * height + i) * width + j] = f(c, i, j);
                }
            }
        }
        g
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.values[(c * self.height + i) * self.width + j]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// SHA-256 of the little-endian `f64` payload, as hex.
    pub fn checksum(&self) -> String {
        checksum_f64(&self.values)
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> Result<f64> {
        same_shape(self, other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn checksum_f64(values: &[f64]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn same_shape(a: &LatentGrid, b: &LatentGrid) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Elementwise product of two grids of equal shape.
pub fn hadamard(a: &LatentGrid, b: &LatentGrid) -> Result<LatentGrid> {
    same_shape(a, b)?;
    let values = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
    Ok(LatentGrid { values, ..*a })
}

/// Elementwise product with a mask broadcast over every channel.
pub fn hadamard_mask(a: &LatentGrid, m: &MaskGrid) -> Result<LatentGrid> {
    if (a.height, a.width) != m.shape() {
        return Err(Error::dim(format!(
            "grid {:?} cannot broadcast mask {:?}",
            a.shape(),
            m.shape()
        )));
    }
    let plane = a.height * a.width;
    let values = a
        .values
        .iter()
        .enumerate()
        .map(|(idx, x)| x * m.values[idx % plane])
        .collect();
    Ok(LatentGrid { values, ..*a })
}

/// `1 - m` on a binary mask.
pub fn complement(m: &MaskGrid) -> Result<MaskGrid> {
    m.require_binary("complement operand")?;
    Ok(MaskGrid {
        height: m.height,
        width: m.width,
        values: m.values.iter().map(|v| 1.0 - v).collect(),
    })
}

/// Nearest-neighbour downsampling that samples the top-left pixel of each
/// `factor × factor` block.
pub fn downsample_nearest(m: &MaskGrid, factor: usize) -> Result<MaskGrid> {
    if factor == 0 {
        return Err(Error::domain("downsample factor must be positive"));
    }
    if !m.height.is_multiple_of(factor) || !m.width.is_multiple_of(factor) {
        return Err(Error::dim(format!(
            "mask {}x{} is not divisible by factor {factor}",
            m.height, m.width
        )));
    }
    let (h, w) = (m.height / factor, m.width / factor);
    let mut values = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            values.push(m.get(i * factor, j * factor));
        }
    }
    Ok(MaskGrid {
        height: h,
        width: w,
        values,
    })
}

/// Binary dilation with a `(2r+1) × (2r+1)` square structuring element.
pub fn dilate(m: &MaskGrid, radius: usize) -> Result<MaskGrid> {
    m.require_binary("dilation operand")?;
    if radius == 0 {
        return Ok(m.clone());
    }
    // Separable: a square element is a horizontal pass followed by a vertical one.
    let (h, w) = m.shape();
    let mut horiz = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let lo = j.saturating_sub(radius);
            let hi = (j + radius).min(w - 1);
            if (lo..=hi).any(|jj| m.values[i * w + jj] == 1.0) {
                horiz[i * w + j] = 1.0;
            }
        }
    }
    let mut values = vec![0.0; h * w];
    for i in 0..h {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(h - 1);
        for j in 0..w {
            if (lo..=hi).any(|ii| horiz[ii * w + j] == 1.0) {
                values[i * w + j] = 1.0;
            }
        }
    }
    Ok(MaskGrid {
        height: h,
        width: w,
        values,
    })
}

/// Translate by `dx` columns and `dy` rows. Exposed borders fill with zero and
/// pixels pushed off the grid are dropped.
pub fn shift(m: &MaskGrid, dx: i64, dy: i64) -> Result<MaskGrid> {
    m.require_binary("shift operand")?;
    let (h, w) = m.shape();
    let mut values = vec![0.0; h * w];
    for i in 0..h {
        let src_i = i as i64 - dy;
        if src_i < 0 || src_i >= h as i64 {
            continue;
        }
        for j in 0..w {
            let src_j = j as i64 - dx;
            if src_j < 0 || src_j >= w as i64 {
                continue;
            }
            values[i * w + j] = m.values[src_i as usize * w + src_j as usize];
        }
    }
    Ok(MaskGrid {
        height: h,
        width: w,
        values,
    })
}
