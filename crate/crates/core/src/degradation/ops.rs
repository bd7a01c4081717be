use serde::{Deserialize, Serialize};

use super::jpeg::jpeg_roundtrip;
use crate::error::{Error, Result};
use crate::imgproc::{
    clamp_unit, flip_horizontal, gaussian_blur, resize_bilinear, to_grayscale, ImageBuffer, CHANNELS,
};
use crate::rng::RngStream;

/// Smallest side `DownSample` will shrink an image to.
pub const MIN_SIDE: usize = 16;
/// Largest side `UpSample` and `ScaleJitter` may produce.
pub const MAX_SIDE: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    ScaleJitter,
    HorizontalFlip,
    DownSample,
    UpSample,
    ColorJitter,
    Grayscale,
    AddNoise,
    Fuzzify,
    JpegCompress,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Geometric,
    Color,
    Texture,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Geometric, Category::Color, Category::Texture];

    pub fn name(self) -> &'static str {
        match self {
            Category::Geometric => "geometric",
            Category::Color => "color",
            Category::Texture => "texture",
        }
    }
}

impl OpKind {
    /// All operators in canonical order; a non-shuffled sequence follows it.
    pub const ALL: [OpKind; 9] = [
        OpKind::ScaleJitter,
        OpKind::HorizontalFlip,
        OpKind::DownSample,
        OpKind::UpSample,
        OpKind::ColorJitter,
        OpKind::Grayscale,
        OpKind::AddNoise,
        OpKind::Fuzzify,
        OpKind::JpegCompress,
    ];

    pub fn category(self) -> Category {
        match self {
            OpKind::ScaleJitter | OpKind::HorizontalFlip | OpKind::DownSample | OpKind::UpSample => {
                Category::Geometric
            }
            OpKind::ColorJitter | OpKind::Grayscale => Category::Color,
            OpKind::AddNoise | OpKind::Fuzzify | OpKind::JpegCompress => Category::Texture,
        }
    }

    pub fn in_category(cat: Category) -> Vec<OpKind> {
        OpKind::ALL.into_iter().filter(|k| k.category() == cat).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::ScaleJitter => "scale_jitter",
            OpKind::HorizontalFlip => "horizontal_flip",
            OpKind::DownSample => "down_sample",
            OpKind::UpSample => "up_sample",
            OpKind::ColorJitter => "color_jitter",
            OpKind::Grayscale => "grayscale",
            OpKind::AddNoise => "add_noise",
            OpKind::Fuzzify => "fuzzify",
            OpKind::JpegCompress => "jpeg_compress",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Operator hyperparameters. The noise seed is part of the parameters so a
/// recorded plan replays without any outside randomness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpParams {
    ScaleJitter { scale: f64 },
    HorizontalFlip,
    DownSample { factor: f64 },
    UpSample { factor: f64 },
    ColorJitter { brightness: f64, contrast: f64, saturation: f64, hue: f64 },
    Grayscale,
    AddNoise { sigma: f64, seed: u64 },
    Fuzzify { sigma: f64 },
    JpegCompress { quality: u8 },
}

impl OpParams {
    pub fn kind(&self) -> OpKind {
        match self {
            OpParams::ScaleJitter { .. } => OpKind::ScaleJitter,
            OpParams::HorizontalFlip => OpKind::HorizontalFlip,
            OpParams::DownSample { .. } => OpKind::DownSample,
            OpParams::UpSample { .. } => OpKind::UpSample,
            OpParams::ColorJitter { .. } => OpKind::ColorJitter,
            OpParams::Grayscale => OpKind::Grayscale,
            OpParams::AddNoise { .. } => OpKind::AddNoise,
            OpParams::Fuzzify { .. } => OpKind::Fuzzify,
            OpParams::JpegCompress { .. } => OpKind::JpegCompress,
        }
    }

    /// Checks the admissible domain of each operator. This is wider than
    /// the default sampling ranges, which are configuration.
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, what: &str, v: f64) -> Result<()> {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} = {v} outside its admissible range")))
            }
        }
        match *self {
            OpParams::ScaleJitter { scale } => check(scale > 0.0 && scale <= 4.0, "scale_jitter.scale", scale),
            OpParams::DownSample { factor } => {
                check(factor > 0.0 && factor < 1.0, "down_sample.factor", factor)
            }
            OpParams::UpSample { factor } => check(factor > 1.0 && factor <= 4.0, "up_sample.factor", factor),
            OpParams::ColorJitter {
                brightness,
                contrast,
                saturation,
                hue,
            } => {
                check((0.0..=4.0).contains(&brightness), "color_jitter.brightness", brightness)?;
                check((0.0..=4.0).contains(&contrast), "color_jitter.contrast", contrast)?;
                check((0.0..=4.0).contains(&saturation), "color_jitter.saturation", saturation)?;
                check((-0.5..=0.5).contains(&hue), "color_jitter.hue", hue)
            }
            OpParams::AddNoise { sigma, .. } => check((0.0..=1.0).contains(&sigma), "add_noise.sigma", sigma),
            OpParams::Fuzzify { sigma } => check((0.0..=16.0).contains(&sigma), "fuzzify.sigma", sigma),
            OpParams::JpegCompress { quality } => {
                check((1..=100).contains(&quality), "jpeg_compress.quality", f64::from(quality))
            }
            OpParams::HorizontalFlip | OpParams::Grayscale => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpInstance {
    #[serde(flatten)]
    pub params: OpParams,
    #[serde(default)]
    pub skip: bool,
}

impl OpInstance {
    pub fn new(params: OpParams) -> Self {
        Self { params, skip: false }
    }

    pub fn skipped(params: OpParams) -> Self {
        Self { params, skip: true }
    }

    pub fn kind(&self) -> OpKind {
        self.params.kind()
    }
}

/// Applies one operator. A skipped operator returns the input unchanged.
pub fn apply_op(op: &OpInstance, img: &ImageBuffer) -> Result<ImageBuffer> {
    op.params.validate()?;
    if op.skip {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    match op.params {
        OpParams::ScaleJitter { scale } => scale_jitter(img, scale),
        OpParams::HorizontalFlip => Ok(flip_horizontal(img)),
        OpParams::DownSample { factor } => {
            let side = |n: usize| ((n as f64 * factor).round() as usize).max(MIN_SIDE.min(n));
            resize_bilinear(img, side(h), side(w))
        }
        OpParams::UpSample { factor } => {
            let side = |n: usize| (n as f64 * factor).round() as usize;
            let (oh, ow) = (side(h), side(w));
            if oh.max(ow) > MAX_SIDE {
                return Err(Error::invalid(format!("up_sample would produce {oh}x{ow}")));
            }
            resize_bilinear(img, oh, ow)
        }
        OpParams::ColorJitter {
            brightness,
            contrast,
            saturation,
            hue,
        } => Ok(color_jitter(img, brightness, contrast, saturation, hue)),
        OpParams::Grayscale => Ok(to_grayscale(img)),
        OpParams::AddNoise { sigma, seed } => Ok(add_noise(img, sigma, seed)),
        OpParams::Fuzzify { sigma } => gaussian_blur(img, sigma),
        OpParams::JpegCompress { quality } => jpeg_roundtrip(img, quality),
    }
}

/// Resize by `scale`, then center-crop (or edge-pad) back to the input size.
fn scale_jitter(img: &ImageBuffer, scale: f64) -> Result<ImageBuffer> {
    let (h, w) = img.dims();
    let sh = ((h as f64 * scale).round() as usize).max(1);
    let sw = ((w as f64 * scale).round() as usize).max(1);
    if sh.max(sw) > MAX_SIDE {
        return Err(Error::invalid(format!("scale_jitter would produce {sh}x{sw}")));
    }
    let scaled = resize_bilinear(img, sh, sw)?;
    let off_y = (sh as i64 - h as i64).div_euclid(2);
    let off_x = (sw as i64 - w as i64).div_euclid(2);
    Ok(ImageBuffer::from_fn(h, w, |y, x, c| {
        let sy = (y as i64 + off_y).clamp(0, sh as i64 - 1) as usize;
        let sx = (x as i64 + off_x).clamp(0, sw as i64 - 1) as usize;
        scaled.get(sy, sx, c)
    }))
}

#[inline]
fn luma(r: f64, g: f64, b: f64) -> f64 {
    r + 0.587 * (g - r) + 0.114 * (b - r)
}

/// Brightness, contrast, saturation, then hue, each followed by a clamp.
/// Identity factors are skipped exactly.
fn color_jitter(img: &ImageBuffer, brightness: f64, contrast: f64, saturation: f64, hue: f64) -> ImageBuffer {
    let mut data = img.data().to_vec();
    if brightness != 1.0 {
        for v in &mut data {
            *v = clamp_unit(*v * brightness);
        }
    }
    if contrast != 1.0 {
        let n = (data.len() / CHANNELS) as f64;
        let mean = data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).sum::<f64>() / n;
        for v in &mut data {
            *v = clamp_unit(mean + (*v - mean) * contrast);
        }
    }
    if saturation != 1.0 {
        for p in data.chunks_exact_mut(3) {
            let l = luma(p[0], p[1], p[2]);
            for v in p.iter_mut() {
                *v = clamp_unit(l + (*v - l) * saturation);
            }
        }
    }
    if hue != 0.0 {
        // Rotate the chroma plane of YIQ by `hue` turns.
        let (s, c) = (2.0 * std::f64::consts::PI * hue).sin_cos();
        for p in data.chunks_exact_mut(3) {
            let (r, g, b) = (p[0], p[1], p[2]);
            let y = 0.299 * r + 0.587 * g + 0.114 * b;
            let i = 0.595_716 * r - 0.274_453 * g - 0.321_263 * b;
            let q = 0.211_456 * r - 0.522_591 * g + 0.311_135 * b;
            let (i2, q2) = (c * i - s * q, s * i + c * q);
            p[0] = clamp_unit(y + 0.956_3 * i2 + 0.621_0 * q2);
            p[1] = clamp_unit(y - 0.272_1 * i2 - 0.647_4 * q2);
            p[2] = clamp_unit(y - 1.107_0 * i2 + 1.704_6 * q2);
        }
    }
    ImageBuffer::from_raw_clamped(img.height(), img.width(), data)
}

fn add_noise(img: &ImageBuffer, sigma: f64, seed: u64) -> ImageBuffer {
    if sigma == 0.0 {
        return img.clone();
    }
    let mut rng = RngStream::new(seed);
    let data = img.data().iter().map(|&v| v + sigma * rng.normal()).collect();
    ImageBuffer::from_raw_clamped(img.height(), img.width(), data)
}
