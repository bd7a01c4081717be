use super::{clamp_unit, ImageBuffer, CHANNELS};
use crate::error::{Error, Result};

/// Bilinear resize with half-pixel centers: output sample `y` reads source
/// coordinate `(y + 0.5) * in / out - 0.5`, clamped to the image. No
/// prefilter is applied when shrinking.
pub fn resize_bilinear(img: &ImageBuffer, out_h: usize, out_w: usize) -> Result<ImageBuffer> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("resize target {out_h}x{out_w} is empty")));
    }
    if (out_h, out_w) == img.dims() {
        return Ok(img.clone());
    }
    let rows = axis_taps(img.height(), out_h);
    let cols = axis_taps(img.width(), out_w);
    let w = img.width();
    let src = img.data();
    let mut data = Vec::with_capacity(out_h * out_w * CHANNELS);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            for c in 0..CHANNELS {
                let p00 = src[(y0 * w + x0) * CHANNELS + c];
                let p01 = src[(y0 * w + x1) * CHANNELS + c];
                let p10 = src[(y1 * w + x0) * CHANNELS + c];
                let p11 = src[(y1 * w + x1) * CHANNELS + c];
                // lerp as a + (b - a) * t keeps constant regions exact
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                data.push(top + (bottom - top) * fy);
            }
        }
    }
    Ok(ImageBuffer::from_raw_clamped(out_h, out_w, data))
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Normalized taps `exp(-d^2 / 2 sigma^2) / Z` for `d` in `-r..=r`,
/// `r = ceil(3 sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= z;
    }
    taps
}

/// Reflect-101 index (`-1 -> 1`, `n -> n - 2`), valid for any offset.
fn reflect101(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m >= n as i64 { period - m } else { m }) as usize
}

/// Separable Gaussian blur, horizontal then vertical pass, reflect-101
/// borders. Each output is accumulated as `center + sum w_d (x_d - center)`,
/// which equals the normalized convolution and leaves constant regions
/// bit-identical.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> Result<ImageBuffer> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("blur sigma {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as i64;
    let (h, w) = img.dims();

    let mut tmp = vec![0.0; h * w * CHANNELS];
    let src = img.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let center = src[(y * w + x) * CHANNELS + c];
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let xx = reflect101(x as i64 + k as i64 - radius, w);
                    acc += t * (src[(y * w + xx) * CHANNELS + c] - center);
                }
                tmp[(y * w + x) * CHANNELS + c] = center + acc;
            }
        }
    }

    let mut out = vec![0.0; h * w * CHANNELS];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let center = tmp[(y * w + x) * CHANNELS + c];
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let yy = reflect101(y as i64 + k as i64 - radius, h);
                    acc += t * (tmp[(yy * w + x) * CHANNELS + c] - center);
                }
                out[(y * w + x) * CHANNELS + c] = center + acc;
            }
        }
    }
    Ok(ImageBuffer::from_raw_clamped(h, w, out))
}

pub fn flip_horizontal(img: &ImageBuffer) -> ImageBuffer {
    let (h, w) = img.dims();
    let src = img.data();
    let mut data = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let i = (y * w + x) * CHANNELS;
            data.extend_from_slice(&src[i..i + CHANNELS]);
        }
    }
    ImageBuffer::from_raw_clamped(h, w, data)
}

pub fn crop(img: &ImageBuffer, top: usize, left: usize, h: usize, w: usize) -> Result<ImageBuffer> {
    if h == 0 || w == 0 || top + h > img.height() || left + w > img.width() {
        return Err(Error::invalid(format!(
            "crop {h}x{w} at ({top}, {left}) outside {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let src = img.data();
    let stride = img.width() * CHANNELS;
    let mut data = Vec::with_capacity(h * w * CHANNELS);
    for y in top..top + h {
        let start = y * stride + left * CHANNELS;
        data.extend_from_slice(&src[start..start + w * CHANNELS]);
    }
    Ok(ImageBuffer::from_raw_clamped(h, w, data))
}

/// Rec.601 luma `0.299 R + 0.587 G + 0.114 B` in all three channels.
///
/// Evaluated as `R + 0.587 (G - R) + 0.114 (B - R)` so gray pixels map to
/// themselves exactly and the operation is bit-idempotent.
pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(CHANNELS) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let l = clamp_unit(r + 0.587 * (g - r) + 0.114 * (b - r));
        data.extend_from_slice(&[l, l, l]);
    }
    ImageBuffer::from_raw_clamped(img.height(), img.width(), data)
}
