//! Quality-aware pretext batches.
//!
//! Each source image `n` is degraded into `K` views. From every view we cut
//! a query crop and a key crop at different locations. Against a query from
//! `(n, k)`, a key is
//!
//! * a positive if it comes from the same image and the same view,
//! * a degradation negative if it comes from the same image, another view,
//! * a content negative if it comes from another image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degradation::{apply_plan, sample_plan, DegradationPlan, SpaceConfig};
use crate::error::{Error, Result};
use crate::imgproc::{crop, flip_horizontal, resize_bilinear, ImageBuffer};
use crate::rng::RngStream;

pub const MIN_AREA_RATIO: f64 = 0.5;
/// Views smaller than this on either side cannot be cropped.
pub const MIN_VIEW_SIDE: usize = 8;

const CROP_ATTEMPTS: u64 = 16;

#[derive(Clone, Debug)]
pub struct View {
    pub plan: DegradationPlan,
    pub image: ImageBuffer,
}

#[derive(Clone, Debug)]
pub struct ViewSet {
    pub image_id: u64,
    pub views: Vec<View>,
}

/// `K` independently degraded copies of one image; view `v` uses the stream
/// `rng -> "view" -> v`.
pub fn make_views(img: &ImageBuffer, image_id: u64, k: usize, rng: &RngStream, space: &SpaceConfig) -> Result<ViewSet> {
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    let views = (0..k)
        .map(|v| {
            let plan = sample_plan(&rng.at("view", v as u64), space)?;
            let image = apply_plan(&plan, img)?;
            Ok(View { plan, image })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewSet { image_id, views })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRect {
    pub fn full(h: usize, w: usize) -> Self {
        Self {
            top: 0,
            left: 0,
            height: h,
            width: w,
        }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Random crop with area ratio uniform in `[0.5, 1]` and aspect ratio
/// uniform in `[3/4, 4/3]`. Side lengths are rounded up, so the realized
/// area never drops below the drawn ratio. Draws that do not fit are
/// retried; after `CROP_ATTEMPTS` failures the whole view is used.
pub fn sample_crop(h: usize, w: usize, rng: &mut RngStream) -> CropRect {
    let area = (h * w) as f64;
    for _ in 0..CROP_ATTEMPTS {
        let ratio = rng.uniform(MIN_AREA_RATIO, 1.0);
        let aspect = rng.uniform(0.75, 4.0 / 3.0);
        let cw = (ratio * area * aspect).sqrt().ceil() as usize;
        let ch = (ratio * area / aspect).sqrt().ceil() as usize;
        if cw <= w && ch <= h && cw >= 1 && ch >= 1 {
            let top = rng.below((h - ch + 1) as u64) as usize;
            let left = rng.below((w - cw + 1) as u64) as usize;
            return CropRect {
                top,
                left,
                height: ch,
                width: cw,
            };
        }
    }
    CropRect::full(h, w)
}

#[derive(Clone, Debug)]
pub struct Patch {
    pub image: ImageBuffer,
    pub rect: CropRect,
    pub flipped: bool,
}

/// Crops `rect`, resizes to `out_size` square and optionally mirrors.
pub fn extract_patch(view: &ImageBuffer, rect: CropRect, flip: bool, out_size: usize) -> Result<Patch> {
    let c = crop(view, rect.top, rect.left, rect.height, rect.width)?;
    let mut image = resize_bilinear(&c, out_size, out_size)?;
    if flip {
        image = flip_horizontal(&image);
    }
    Ok(Patch {
        image,
        rect,
        flipped: flip,
    })
}

/// Query and key patch from one view, at distinct top-left corners, each
/// mirrored with probability 1/2.
pub fn make_pair(view: &ImageBuffer, rng: &RngStream, out_size: usize) -> Result<(Patch, Patch)> {
    let (h, w) = view.dims();
    if h < MIN_VIEW_SIDE || w < MIN_VIEW_SIDE {
        return Err(Error::invalid(format!(
            "view {h}x{w} below the minimum croppable size {MIN_VIEW_SIDE}"
        )));
    }
    if out_size == 0 {
        return Err(Error::invalid("out_size must be positive"));
    }
    let mut q_rng = rng.derive("query");
    let q_rect = sample_crop(h, w, &mut q_rng);
    let mut k_rect = sample_crop(h, w, &mut rng.derive("key"));
    let mut attempt = 0;
    while (k_rect.top, k_rect.left) == (q_rect.top, q_rect.left) && attempt < CROP_ATTEMPTS {
        k_rect = sample_crop(h, w, &mut rng.at("key-retry", attempt));
        attempt += 1;
    }
    if (k_rect.top, k_rect.left) == (q_rect.top, q_rect.left) {
        // Only reachable when both draws fell back to the full view: shift a
        // one-pixel-smaller key crop, which keeps the area bound for views
        // of at least MIN_VIEW_SIDE.
        k_rect = CropRect {
            top: if q_rect.top == 0 { 1 } else { 0 },
            left: if q_rect.left == 0 { 1 } else { 0 },
            height: h - 1,
            width: w - 1,
        };
    }
    let mut flips = rng.derive("flip");
    let q = extract_patch(view, q_rect, flips.bernoulli(0.5), out_size)?;
    let k = extract_patch(view, k_rect, flips.bernoulli(0.5), out_size)?;
    Ok((q, k))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Positive,
    DegradationNegative,
    ContentNegative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchTag {
    pub image_id: u64,
    /// Position of the source image within the batch.
    pub image_index: usize,
    pub view: usize,
    pub rect: CropRect,
    pub flipped: bool,
}

/// `B` images x `K` views, one query and one key patch each. Entry
/// `n * K + k` belongs to image `n`, view `k`.
#[derive(Clone, Debug)]
pub struct PatchBatch {
    pub images: usize,
    pub views: usize,
    pub queries: Vec<ImageBuffer>,
    pub keys: Vec<ImageBuffer>,
    pub query_tags: Vec<PatchTag>,
    pub key_tags: Vec<PatchTag>,
    pub plans: Vec<DegradationPlan>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn image_ids(&self) -> Vec<u64> {
        self.query_tags.iter().step_by(self.views).map(|t| t.image_id).collect()
    }

    pub fn relation(&self, query: usize, key: usize) -> Relation {
        let (q, k) = (&self.query_tags[query], &self.key_tags[key]);
        if q.image_index != k.image_index {
            Relation::ContentNegative
        } else if q.view != k.view {
            Relation::DegradationNegative
        } else {
            Relation::Positive
        }
    }

    /// Counts of (positive, degradation-negative, content-negative) over all
    /// ordered (query, key) combinations.
    pub fn relation_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for q in 0..self.len() {
            for k in 0..self.len() {
                match self.relation(q, k) {
                    Relation::Positive => counts.0 += 1,
                    Relation::DegradationNegative => counts.1 += 1,
                    Relation::ContentNegative => counts.2 += 1,
                }
            }
        }
        counts
    }

    /// SHA-256 over every patch sample, queries then keys.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in self.queries.iter().chain(&self.keys) {
            p.hash_into(&mut h);
        }
        hex::encode(h.finalize())
    }
}

/// Builds a batch. Randomness for image `id` comes from
/// `rng -> "image" -> id`, so the result does not depend on batch position
/// or on how many rayon workers run; images are merged back in input order.
pub fn assemble_batch(
    images: &[(u64, &ImageBuffer)],
    k: usize,
    rng: &RngStream,
    out_size: usize,
    space: &SpaceConfig,
) -> Result<PatchBatch> {
    if images.is_empty() {
        return Err(Error::invalid("batch needs at least one image"));
    }
    if out_size < 16 {
        return Err(Error::invalid(format!("out_size {out_size} below 16")));
    }
    let per_image: Vec<Vec<(View, Patch, Patch)>> = images
        .par_iter()
        .map(|&(id, img)| {
            let img_rng = rng.at("image", id);
            let set = make_views(img, id, k, &img_rng, space)?;
            set.views
                .into_iter()
                .enumerate()
                .map(|(v, view)| {
                    let (q, key) = make_pair(&view.image, &img_rng.at("pair", v as u64), out_size)?;
                    Ok((view, q, key))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut batch = PatchBatch {
        images: images.len(),
        views: k,
        queries: Vec::with_capacity(images.len() * k),
        keys: Vec::with_capacity(images.len() * k),
        query_tags: Vec::with_capacity(images.len() * k),
        key_tags: Vec::with_capacity(images.len() * k),
        plans: Vec::with_capacity(images.len() * k),
    };
    for (n, (entries, &(id, _))) in per_image.into_iter().zip(images).enumerate() {
        for (v, (view, q, key)) in entries.into_iter().enumerate() {
            let tag = |p: &Patch| PatchTag {
                image_id: id,
                image_index: n,
                view: v,
                rect: p.rect,
                flipped: p.flipped,
            };
            batch.query_tags.push(tag(&q));
            batch.key_tags.push(tag(&key));
            batch.queries.push(q.image);
            batch.keys.push(key.image);
            batch.plans.push(view.plan);
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(n: usize) -> ImageBuffer {
        ImageBuffer::from_fn(n, n, |y, x, c| (y as f64 + 2.0 * x as f64 + c as f64) / (3.0 * n as f64))
    }

    #[test]
    fn identity_views() {
        let img = gradient(32);
        let space = SpaceConfig {
            p_skip: 1.0,
            p_second_order: 0.0,
            ..SpaceConfig::default()
        };
        let set = make_views(&img, 5, 1, &RngStream::new(1), &space).unwrap();
        assert_eq!(set.views.len(), 1);
        assert_eq!(set.views[0].image, img);
        assert!(make_views(&img, 5, 0, &RngStream::new(1), &space).is_err());
    }

    #[test]
    fn views_are_seeded() {
        let img = gradient(32);
        let space = SpaceConfig::default();
        let a = make_views(&img, 0, 3, &RngStream::new(9), &space).unwrap();
        let b = make_views(&img, 0, 3, &RngStream::new(9), &space).unwrap();
        for (x, y) in a.views.iter().zip(&b.views) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.plan, y.plan);
        }
    }

    #[test]
    fn full_crops_of_constant_view_are_identical() {
        let view = ImageBuffer::filled(40, 40, 0.3);
        let full = CropRect::full(40, 40);
        let a = extract_patch(&view, full, false, 32).unwrap();
        let b = extract_patch(&view, full, true, 32).unwrap();
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn crops_respect_area_bound() {
        let mut rng = RngStream::new(77);
        for i in 0..10_000u64 {
            let h = 8 + (i % 97) as usize;
            let w = 8 + (i % 61) as usize;
            let r = sample_crop(h, w, &mut rng);
            assert!(r.top + r.height <= h && r.left + r.width <= w);
            assert!(r.area() as f64 >= MIN_AREA_RATIO * (h * w) as f64);
        }
    }

    #[test]
    fn pair_corners_differ_and_small_views_fail() {
        let view = gradient(64);
        for s in 0..200 {
            let (q, k) = make_pair(&view, &RngStream::new(s), 32).unwrap();
            assert_ne!((q.rect.top, q.rect.left), (k.rect.top, k.rect.left));
            assert_eq!(q.image.dims(), (32, 32));
        }
        let tiny = ImageBuffer::filled(7, 30, 0.5);
        assert!(make_pair(&tiny, &RngStream::new(0), 32).is_err());
        // the minimum view still works, including the shifted fallback
        let small = gradient(MIN_VIEW_SIDE);
        for s in 0..200 {
            let (q, k) = make_pair(&small, &RngStream::new(s), 16).unwrap();
            assert_ne!((q.rect.top, q.rect.left), (k.rect.top, k.rect.left));
            assert!(k.rect.area() * 2 >= MIN_VIEW_SIDE * MIN_VIEW_SIDE);
        }
    }

    #[test]
    fn taxonomy_counts() {
        let a = gradient(48);
        let b = ImageBuffer::from_fn(48, 48, |y, _, _| y as f64 / 47.0);
        let space = SpaceConfig::default();
        let one = assemble_batch(&[(0, &a)], 2, &RngStream::new(1), 16, &space).unwrap();
        // B = 1, K = 2: 2 positives, 2 ordered degradation negatives.
        assert_eq!(one.relation_counts(), (2, 2, 0));
        let two = assemble_batch(&[(0, &a), (1, &b)], 2, &RngStream::new(1), 16, &space).unwrap();
        for q in 0..two.len() {
            let rel: Vec<Relation> = (0..two.len()).map(|k| two.relation(q, k)).collect();
            assert_eq!(rel.iter().filter(|r| **r == Relation::Positive).count(), 1);
            assert_eq!(rel.iter().filter(|r| **r == Relation::DegradationNegative).count(), 1);
            assert_eq!(rel.iter().filter(|r| **r == Relation::ContentNegative).count(), 2);
        }
        assert_eq!(two.image_ids(), vec![0, 1]);
    }

    #[test]
    fn batch_rejects_bad_arguments() {
        let a = gradient(32);
        let space = SpaceConfig::default();
        assert!(assemble_batch(&[], 2, &RngStream::new(0), 16, &space).is_err());
        assert!(assemble_batch(&[(0, &a)], 2, &RngStream::new(0), 8, &space).is_err());
    }
}
