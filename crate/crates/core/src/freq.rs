//! 2D discrete Fourier transforms and the ideal low-pass filter applied to
//! the image condition.
//!
//! Transforms are computed separably (rows, then columns) from precomputed
//! twiddle tables, with no padding: the spectrum has exactly the size of the
//! input field. The forward transform is unnormalized; the inverse divides by
//! `height · width`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

/// Imaginary residue above which an inverse transform is rejected.
pub const IMAG_RESIDUE_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    height: usize,
    width: usize,
    bins: Vec<Complex64>,
}

impl Spectrum2D {
    pub fn new(height: usize, width: usize, bins: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 || bins.len() != height * width {
            return Err(Error::dim(format!(
                "spectrum {height}x{width} cannot hold {} bins",
                bins.len()
            )));
        }
        Ok(Self { height, width, bins })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.bins[u * self.width + v]
    }
}

/// `exp(sign · 2πi · k / n)` for `k` in `0..n`.
fn twiddles(n: usize, sign: f64) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            let theta = sign * 2.0 * PI * k as f64 / n as f64;
            Complex64::new(libm::cos(theta), libm::sin(theta))
        })
        .collect()
}

fn transform_1d(input: &[Complex64], output: &mut [Complex64], table: &[Complex64]) {
    let n = input.len();
    for (k, out) in output.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, value) in input.iter().enumerate() {
            acc += value * table[(k * x) % n];
        }
        *out = acc;
    }
}

fn transform_2d(data: &mut [Complex64], height: usize, width: usize, sign: f64) {
    let row_table = twiddles(width, sign);
    let col_table = twiddles(height, sign);

    let mut scratch = vec![Complex64::new(0.0, 0.0); width.max(height)];
    for row in data.chunks_exact_mut(width) {
        transform_1d(row, &mut scratch[..width], &row_table);
        row.copy_from_slice(&scratch[..width]);
    }

    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for j in 0..width {
        for i in 0..height {
            column[i] = data[i * width + j];
        }
        transform_1d(&column, &mut scratch[..height], &col_table);
        for i in 0..height {
            data[i * width + j] = scratch[i];
        }
    }
}

/// Unnormalized forward 2D DFT of a row-major `height × width` field.
pub fn dft2(field: &[f64], height: usize, width: usize) -> Result<Spectrum2D> {
    if height == 0 || width == 0 || field.len() != height * width {
        return Err(Error::dim(format!(
            "field of {} values is not {height}x{width}",
            field.len()
        )));
    }
    if field.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("dft2 input must be finite"));
    }
    let mut bins: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut bins, height, width, -1.0);
    Spectrum2D::new(height, width, bins)
}

/// Inverse 2D DFT of a conjugate-symmetric spectrum, returning the real part.
///
/// Fails with an integrity error if any element's imaginary residue reaches
/// [`IMAG_RESIDUE_LIMIT`].
pub fn idft2(spectrum: &Spectrum2D) -> Result<Vec<f64>> {
    let (h, w) = (spectrum.height, spectrum.width);
    let mut data = spectrum.bins.clone();
    transform_2d(&mut data, h, w, 1.0);
    let scale = 1.0 / (h * w) as f64;
    let mut out = Vec::with_capacity(h * w);
    for z in data {
        let z = z * scale;
        if z.im.abs() >= IMAG_RESIDUE_LIMIT || !z.re.is_finite() {
            return Err(Error::Integrity(format!(
                "inverse transform left imaginary residue {:e}",
                z.im
            )));
        }
        out.push(z.re);
    }
    Ok(out)
}

/// Absolute normalized angular frequency of bin `k` on an axis of length `n`,
/// in `[0, π]`.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    let signed = k.min(n - k);
    2.0 * PI * signed as f64 / n as f64
}

/// Ideal low-pass filter over every channel.
///
/// Bins whose Chebyshev frequency `max(|ω_u|, |ω_v|)` exceeds `gamma` are
/// zeroed. `gamma = π` keeps every bin and returns an exact copy without
/// transforming.
pub fn lpf(z: &LatentGrid, gamma: f64) -> Result<LatentGrid> {
    if !(0.0..=PI).contains(&gamma) {
        return Err(Error::domain(format!("gamma outside [0, π]: {gamma}")));
    }
    if gamma == PI {
        return Ok(z.clone());
    }
    let (channels, h, w) = z.shape();
    let keep: Vec<bool> = (0..h)
        .flat_map(|u| (0..w).map(move |v| bin_frequency(u, h).max(bin_frequency(v, w)) <= gamma))
        .collect();

    let mut out = z.clone();
    for c in 0..channels {
        let spectrum = dft2(z.channel(c), h, w)?;
        let bins = spectrum
            .bins
            .iter()
            .zip(&keep)
            .map(|(&b, &k)| if k { b } else { Complex64::new(0.0, 0.0) })
            .collect();
        let filtered = idft2(&Spectrum2D::new(h, w, bins)?)?;
        out.channel_mut(c).copy_from_slice(&filtered);
    }
    Ok(out)
}
