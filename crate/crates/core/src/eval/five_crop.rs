use crate::error::{Error, Result};
use crate::imgproc::{crop, ImageBuffer};
use crate::sampler::CropRect;

/// Top-left, top-right, bottom-left, bottom-right and center squares of side
/// `size`. The center offset rounds down.
pub fn five_crops(height: usize, width: usize, size: usize) -> Result<[CropRect; 5]> {
    if size == 0 || size > height || size > width {
        return Err(Error::invalid(format!(
            "{height}x{width} image is smaller than the {size}px crop"
        )));
    }
    let (b, r) = (height - size, width - size);
    let at = |top, left| CropRect {
        top,
        left,
        height: size,
        width: size,
    };
    Ok([at(0, 0), at(0, r), at(b, 0), at(b, r), at(b / 2, r / 2)])
}

/// Mean of `model` over the five crops.
pub fn five_crop_score<F>(img: &ImageBuffer, size: usize, mut model: F) -> Result<f64>
where
    F: FnMut(&ImageBuffer) -> Result<f64>,
{
    let mut total = 0.0;
    for r in five_crops(img.height(), img.width(), size)? {
        total += model(&crop(img, r.top, r.left, r.height, r.width)?)?;
    }
    Ok(total / 5.0)
}
