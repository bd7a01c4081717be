//! JPEG-style lossy round trip: the quantization stage of baseline JPEG
//! without entropy coding (which is lossless and does not affect the
//! reconstruction).
//!
//! Per 8x8 block and channel, after full-range RGB -> YCbCr and with no
//! chroma subsampling: forward DCT-II, quantize with the Annex K tables
//! scaled by the libjpeg quality law, dequantize, inverse DCT, convert back
//! and clamp. Partial edge blocks are padded by edge replication.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::imgproc::{ImageBuffer, CHANNELS};

/// Annex K.1 luminance table (natural order).
pub const BASE_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K.2 chrominance table (natural order).
pub const BASE_CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// libjpeg quality scaling: `5000 / q` (integer division) below 50,
/// `200 - 2q` otherwise; entries are `(base * scale + 50) / 100` clamped to
/// `1..=255`.
pub fn scaled_table(base: &[u16; 64], quality: u8) -> Result<[u16; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("jpeg quality {quality} outside 1..=100")));
    }
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(out)
}

/// Orthonormal DCT-II basis: `basis[u][x] = C(u) / 2 * cos((2x + 1) u pi / 16)`.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * c * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
            }
        }
        m
    })
}

fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    // rows: tmp[y][u] = sum_x block[y][x] b[u][x]
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| block[y * 8 + x] * b[u][x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| tmp[y * 8 + u] * b[v][y]).sum();
        }
    }
    out
}

fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| coef[v * 8 + u] * b[u][x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| tmp[v * 8 + x] * b[v][y]).sum();
        }
    }
    out
}

fn quantize_block(block: &mut [f64; 64], table: &[u16; 64]) {
    let coef = fdct(block);
    let mut q = [0.0; 64];
    for i in 0..64 {
        let step = f64::from(table[i]);
        q[i] = (coef[i] / step).round() * step;
    }
    *block = idct(&q);
}

pub fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0,
        0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0,
    ]
}

pub fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    [
        y + 1.402 * (cr - 128.0),
        y - 0.344_136 * (cb - 128.0) - 0.714_136 * (cr - 128.0),
        y + 1.772 * (cb - 128.0),
    ]
}

pub fn jpeg_roundtrip(img: &ImageBuffer, quality: u8) -> Result<ImageBuffer> {
    let luma = scaled_table(&BASE_LUMA, quality)?;
    let chroma = scaled_table(&BASE_CHROMA, quality)?;
    let (h, w) = img.dims();

    // Planes on the 0..255 scale, level-shifted by -128.
    let mut planes = vec![vec![0.0; h * w]; CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = img.pixel(y, x);
            let ycc = rgb_to_ycbcr(r * 255.0, g * 255.0, b * 255.0);
            for c in 0..CHANNELS {
                planes[c][y * w + x] = ycc[c] - 128.0;
            }
        }
    }

    for (c, plane) in planes.iter_mut().enumerate() {
        let table = if c == 0 { &luma } else { &chroma };
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let mut block = [0.0; 64];
                for dy in 0..8 {
                    let sy = (by + dy).min(h - 1);
                    for dx in 0..8 {
                        let sx = (bx + dx).min(w - 1);
                        block[dy * 8 + dx] = plane[sy * w + sx];
                    }
                }
                quantize_block(&mut block, table);
                for dy in 0..8.min(h - by) {
                    for dx in 0..8.min(w - bx) {
                        plane[(by + dy) * w + bx + dx] = block[dy * 8 + dx];
                    }
                }
            }
        }
    }

    let mut data = Vec::with_capacity(h * w * CHANNELS);
    for i in 0..h * w {
        let rgb = ycbcr_to_rgb(planes[0][i] + 128.0, planes[1][i] + 128.0, planes[2][i] + 128.0);
        data.extend(rgb.iter().map(|v| v / 255.0));
    }
    Ok(ImageBuffer::from_raw_clamped(h, w, data))
}
