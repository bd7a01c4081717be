use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degradation::{apply_op, jpeg_roundtrip, OpInstance, OpParams};
use crate::error::{Error, Result};
use crate::imgproc::{gaussian_blur, load_image, resize_bilinear, save_image, ImageBuffer, CHANNELS};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Distortion families of the synthetic benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Noise,
    Blur,
    Jpeg,
    /// Down-sample then resize back to the original size.
    Resample,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Noise, Family::Blur, Family::Jpeg, Family::Resample];

    pub fn name(self) -> &'static str {
        match self {
            Family::Noise => "noise",
            Family::Blur => "blur",
            Family::Jpeg => "jpeg",
            Family::Resample => "resample",
        }
    }

    pub fn from_name(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }

    /// Severity parameter of `level` (0 = mildest) on a ladder of `levels`
    /// steps: noise sigma 0.01 to 0.1 (geometric), blur sigma 0.5 to 3,
    /// JPEG quality 80 to 10, resample factor 0.8 to 0.25.
    pub fn parameter(self, level: usize, levels: usize) -> f64 {
        let t = level as f64 / (levels - 1) as f64;
        match self {
            Family::Noise => 0.01 * 10f64.powf(t),
            Family::Blur => 0.5 + 2.5 * t,
            Family::Jpeg => (80.0 - 70.0 * t).round(),
            Family::Resample => 0.8 - 0.55 * t,
        }
    }

    pub fn apply(self, img: &ImageBuffer, level: usize, levels: usize, noise_seed: u64) -> Result<ImageBuffer> {
        let p = self.parameter(level, levels);
        match self {
            Family::Noise => apply_op(
                &OpInstance::new(OpParams::AddNoise {
                    sigma: p,
                    seed: noise_seed,
                }),
                img,
            ),
            Family::Blur => gaussian_blur(img, p),
            Family::Jpeg => jpeg_roundtrip(img, p as u8),
            Family::Resample => {
                let (h, w) = img.dims();
                let small = resize_bilinear(
                    img,
                    ((h as f64 * p).round() as usize).max(1),
                    ((w as f64 * p).round() as usize).max(1),
                )?;
                resize_bilinear(&small, h, w)
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: String,
    /// Path relative to the manifest directory.
    pub path: String,
    pub score: f64,
    pub split: Split,
    pub family: Option<Family>,
    pub level: Option<usize>,
}

/// Labeled images with their decoded buffers, index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub items: Vec<ScoredItem>,
    pub images: Vec<ImageBuffer>,
}

impl ScoredSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.score).collect()
    }

    /// Indices of the manifest's own split tags.
    pub fn tagged_split(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| self.items[i].split == Split::Train)
    }

    /// A random split with `round(test_fraction * n)` test items, both
    /// index lists sorted.
    pub fn random_split(&self, seed: u64, test_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
        random_split(self.len(), seed, test_fraction)
    }
}

pub fn random_split(n: usize, seed: u64, test_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut test = RngStream::new(seed).derive("split").subset(n, n_test);
    test.sort_unstable();
    let train = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticBenchSpec {
    pub seed: u64,
    /// Side of the square benchmark images.
    pub size: usize,
    pub s_max: f64,
    /// Score drop per severity level.
    pub step: f64,
    /// Half-width of the uniform score jitter.
    pub jitter: f64,
    pub families: Vec<Family>,
    pub test_fraction: f64,
}

impl Default for SyntheticBenchSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 80,
            s_max: 100.0,
            step: 10.0,
            jitter: 1.0,
            families: Family::ALL.to_vec(),
            test_fraction: 0.2,
        }
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Seeded multi-scale value noise with a few flat-colored discs and boxes on
/// top, quantized to 8 bits.
pub fn base_texture(rng: &RngStream, height: usize, width: usize) -> ImageBuffer {
    let mut data = vec![0.0; height * width * CHANNELS];
    let mut total_amp = 0.0;
    for (o, cell) in [32.0, 16.0, 8.0, 4.0].into_iter().enumerate() {
        let mut r = rng.at("octave", o as u64);
        let amp = 0.5f64.powi(o as i32);
        total_amp += amp;
        let gh = (height as f64 / cell).ceil() as usize + 2;
        let gw = (width as f64 / cell).ceil() as usize + 2;
        let grid: Vec<f64> = (0..gh * gw * CHANNELS).map(|_| r.next_f64()).collect();
        let (oy, ox) = (r.uniform(0.0, cell), r.uniform(0.0, cell));
        for y in 0..height {
            let fy = (y as f64 + oy) / cell;
            let (y0, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
            for x in 0..width {
                let fx = (x as f64 + ox) / cell;
                let (x0, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
                for c in 0..CHANNELS {
                    let g = |yy: usize, xx: usize| grid[(yy * gw + xx) * CHANNELS + c];
                    let top = g(y0, x0) + (g(y0, x0 + 1) - g(y0, x0)) * tx;
                    let bot = g(y0 + 1, x0) + (g(y0 + 1, x0 + 1) - g(y0 + 1, x0)) * tx;
                    data[(y * width + x) * CHANNELS + c] += amp * (top + (bot - top) * ty);
                }
            }
        }
    }
    data.iter_mut().for_each(|v| *v /= total_amp);
    let mut r = rng.derive("shapes");
    let shapes = r.int_range(3, 6);
    for _ in 0..shapes {
        let color = [r.next_f64(), r.next_f64(), r.next_f64()];
        let cy = r.uniform(0.0, height as f64);
        let cx = r.uniform(0.0, width as f64);
        let ry = r.uniform(0.08, 0.25) * height as f64;
        let rx = r.uniform(0.08, 0.25) * width as f64;
        let disc = r.bernoulli(0.5);
        for y in 0..height {
            for x in 0..width {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    data[(y * width + x) * CHANNELS..][..CHANNELS].copy_from_slice(&color);
                }
            }
        }
    }
    let img = ImageBuffer::from_fn(height, width, |y, x, c| data[(y * width + x) * CHANNELS + c]);
    ImageBuffer::from_rgb8(height, width, &img.to_rgb8()).expect("same dimensions")
}

/// `n` clean textures for pretraining, disjoint in stream from any
/// benchmark generated with the same seed.
pub fn gen_corpus(seed: u64, n: usize, size: usize) -> Vec<ImageBuffer> {
    let rng = RngStream::new(seed).derive("corpus");
    (0..n as u64)
        .into_par_iter()
        .map(|i| base_texture(&rng.at("image", i), size, size))
        .collect()
}

/// `n_base` textures x families x `levels` severities. Item scores follow
/// `s_max - step * level` plus uniform jitter; images are quantized to 8
/// bits so an exported benchmark re-ingests exactly.
pub fn gen_synthetic_bench(spec: &SyntheticBenchSpec, n_base: usize, levels: usize) -> Result<ScoredSet> {
    if n_base == 0 {
        return Err(Error::invalid("benchmark needs at least one base image"));
    }
    if levels < 2 {
        return Err(Error::invalid("benchmark needs at least two severity levels"));
    }
    if spec.families.is_empty() {
        return Err(Error::invalid("benchmark needs at least one distortion family"));
    }
    if levels > 71 {
        return Err(Error::invalid("JPEG ladder is only strictly ordered up to 71 levels"));
    }
    let root = RngStream::new(spec.seed).derive("bench");
    let per_base: Vec<Vec<(ScoredItem, ImageBuffer)>> = (0..n_base)
        .into_par_iter()
        .map(|b| {
            let base_rng = root.at("base", b as u64);
            let base = base_texture(&base_rng, spec.size, spec.size);
            let mut out = Vec::with_capacity(spec.families.len() * levels);
            for (fi, &family) in spec.families.iter().enumerate() {
                for level in 0..levels {
                    let idx = (fi * levels + level) as u64;
                    let noise_seed = base_rng.at("noise", idx).next_u64();
                    let img = family.apply(&base, level, levels, noise_seed)?;
                    let img = ImageBuffer::from_rgb8(img.height(), img.width(), &img.to_rgb8())?;
                    let jitter = base_rng.at("jitter", idx).uniform(-spec.jitter, spec.jitter);
                    let id = format!("b{b:03}_{family}_{level}");
                    out.push((
                        ScoredItem {
                            path: format!("images/{id}.png"),
                            id,
                            score: spec.s_max - spec.step * level as f64 + jitter,
                            split: Split::Train,
                            family: Some(family),
                            level: Some(level),
                        },
                        img,
                    ));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let (mut items, images): (Vec<_>, Vec<_>) = per_base.into_iter().flatten().unzip();
    let (_, test) = random_split(items.len(), spec.seed, spec.test_fraction)?;
    for i in test {
        items[i].split = Split::Test;
    }
    Ok(ScoredSet { items, images })
}

pub const MANIFEST_HEADER: &str = "# id\tpath\tscore\tsplit\tfamily\tlevel";

pub fn write_manifest<W: Write>(mut out: W, items: &[ScoredItem]) -> std::io::Result<()> {
    writeln!(out, "{MANIFEST_HEADER}")?;
    for it in items {
        write!(out, "{}\t{}\t{}\t{}", it.id, it.path, it.score, it.split.as_str())?;
        if let (Some(f), Some(l)) = (it.family, it.level) {
            write!(out, "\t{f}\t{l}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes `images/<id>.png` and `manifest.tsv` under `dir`.
pub fn export_bench(set: &ScoredSet, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    for (item, img) in set.items.iter().zip(&set.images) {
        save_image(img, &dir.join(&item.path))?;
    }
    let path = dir.join("manifest.tsv");
    let mut buf = Vec::new();
    write_manifest(&mut buf, &set.items).map_err(|e| Error::io(&path, e))?;
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub set: ScoredSet,
    pub warnings: Vec<String>,
}

fn parse_row(line: &str) -> std::result::Result<ScoredItem, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 4 && cols.len() != 6 {
        return Err(format!("expected 4 or 6 tab-separated columns, found {}", cols.len()));
    }
    let score: f64 = cols[2].trim().parse().map_err(|_| format!("unparseable score {:?}", cols[2]))?;
    if !score.is_finite() {
        return Err(format!("non-finite score {score}"));
    }
    let split = match cols[3].trim() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(format!("unknown split {other:?}")),
    };
    let (family, level) = if cols.len() == 6 {
        let f = Family::from_name(cols[4].trim()).ok_or_else(|| format!("unknown family {:?}", cols[4]))?;
        let l = cols[5].trim().parse().map_err(|_| format!("unparseable level {:?}", cols[5]))?;
        (Some(f), Some(l))
    } else {
        (None, None)
    };
    Ok(ScoredItem {
        id: cols[0].trim().to_string(),
        path: cols[1].trim().to_string(),
        score,
        split,
        family,
        level,
    })
}

/// Reads a tab-separated manifest (`id path score split [family level]`,
/// `#` comments) and decodes every image. Any bad row fails the whole
/// ingest with a report listing each problem by line number.
pub fn ingest_external(manifest: &Path) -> Result<Ingested> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut items = Vec::new();
    let mut images = Vec::new();
    let mut problems = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let item = match parse_row(line) {
            Ok(it) => it,
            Err(msg) => {
                problems.push(format!("line {line_no}: {msg}"));
                continue;
            }
        };
        match load_image(&root.join(&item.path)) {
            Ok(img) => {
                images.push(img);
                items.push(item);
            }
            Err(e) => problems.push(format!("line {line_no} ({}): {e}", item.id)),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Format(format!(
            "{} bad row(s) in {}:\n  {}",
            problems.len(),
            manifest.display(),
            problems.join("\n  ")
        )));
    }
    let mut warnings = Vec::new();
    if items.is_empty() {
        warnings.push(format!("{} lists no images", manifest.display()));
    }
    let n_test = items.iter().filter(|i| i.split == Split::Test).count();
    if !items.is_empty() && n_test < 3 {
        warnings.push(format!("only {n_test} test item(s); correlation metrics need 3"));
    }
    Ok(Ingested {
        set: ScoredSet { items, images },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severity_ladders_are_strictly_ordered() {
        for levels in [2, 5, 10] {
            for fam in Family::ALL {
                let p: Vec<f64> = (0..levels).map(|l| fam.parameter(l, levels)).collect();
                for w in p.windows(2) {
                    match fam {
                        Family::Noise | Family::Blur => assert!(w[1] > w[0]),
                        Family::Jpeg | Family::Resample => assert!(w[1] < w[0]),
                    }
                }
            }
        }
    }

    #[test]
    fn two_level_scores() {
        let spec = SyntheticBenchSpec::default();
        let set = gen_synthetic_bench(&spec, 2, 2).unwrap();
        assert_eq!(set.len(), 2 * 4 * 2);
        for it in &set.items {
            let base = if it.level == Some(0) { 100.0 } else { 90.0 };
            assert!((it.score - base).abs() <= 1.0);
        }
        assert_eq!(set.items.iter().filter(|i| i.split == Split::Test).count(), 3);
    }

    #[test]
    fn bench_is_deterministic() {
        let spec = SyntheticBenchSpec {
            seed: 9,
            size: 32,
            ..SyntheticBenchSpec::default()
        };
        assert_eq!(gen_synthetic_bench(&spec, 2, 3).unwrap(), gen_synthetic_bench(&spec, 2, 3).unwrap());
        assert_eq!(gen_corpus(1, 3, 24), gen_corpus(1, 3, 24));
    }

    #[test]
    fn rejects_degenerate_specs() {
        let spec = SyntheticBenchSpec::default();
        assert!(gen_synthetic_bench(&spec, 0, 5).is_err());
        assert!(gen_synthetic_bench(&spec, 1, 1).is_err());
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = random_split(260, 3, 0.2).unwrap();
        assert_eq!((tr.len(), te.len()), (208, 52));
        assert_ne!(random_split(260, 4, 0.2).unwrap().1, te);
    }
}
