//! RGB floating-point images and the low-level kernels every degradation
//! and sampling step is built from.
//!
//! Samples live in `[0, 1]`. Every public operation clamps its output, so a
//! buffer produced by this module always satisfies the range invariant.

mod io;
mod kernels;

pub use io::{load_image, read_png, read_ppm, save_image, write_png, write_ppm};
pub use kernels::{crop, flip_horizontal, gaussian_blur, gaussian_taps, resize_bilinear, to_grayscale};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Wraps row-major interleaved RGB samples, rejecting bad lengths and
    /// anything outside `[0, 1]` (including NaN).
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::invalid(format!(
                "buffer of {} samples does not match {height}x{width}x3",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0);
        Self {
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); height * width * CHANNELS],
        }
    }

    /// Builds an image from a per-sample function `f(y, x, c)`; results are
    /// clamped.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0);
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(clamp_unit(f(y, x, c)));
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Internal constructor for kernels that already guarantee the invariants.
    pub(crate) fn from_raw_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * CHANNELS {
            return Err(Error::invalid("rgb8 buffer length mismatch"));
        }
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(height, width, data)
    }

    /// Quantizes to 8 bits with `round(v * 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Applies `f` to every sample in place and re-clamps.
    pub fn map(mut self, f: impl Fn(f64) -> f64) -> Self {
        for v in &mut self.data {
            *v = clamp_unit(f(*v));
        }
        self
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean squared error against an image of the same shape.
    pub fn mse(&self, other: &ImageBuffer) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::invalid("mse of differently sized images"));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn mean_abs_diff(&self, other: &ImageBuffer) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::invalid("mean_abs_diff of differently sized images"));
        }
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Feeds the dimensions and the exact sample bits into a digest.
    pub fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update((self.height as u64).to_le_bytes());
        hasher.update((self.width as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        hex::encode(h.finalize())
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    // NaN maps to 0 so that a bad kernel can never leak it downstream.
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}
