use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{adamw_step, cosine_lr, AdamState, AdamWConfig};
use super::probe::{extract_features, MetricsReport, SeedMetrics};
use crate::error::{Error, Result};
use crate::eval::{five_crop_score, plcc, random_split, srcc, ScoredSet};
use crate::imgproc::{crop, flip_horizontal, resize_bilinear, ImageBuffer};
use crate::model::{Encoder, EncoderParams};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adamw: AdamWConfig,
    /// Resize the shorter edge to this length before cropping. `None` keeps
    /// the native resolution.
    pub resize_short_edge: Option<usize>,
    pub seeds: usize,
    pub test_fraction: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            lr: 3e-3,
            adamw: AdamWConfig::default(),
            resize_short_edge: None,
            seeds: 20,
            test_fraction: 0.2,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.seeds == 0 {
            return Err(Error::invalid("batch size and seed count must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        Ok(())
    }
}

/// Scalar regressor on pooled backbone features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearHead {
    /// Fan-in uniform init, same scheme as the encoder layers.
    pub fn init(dim: usize, rng: &RngStream) -> Self {
        let mut r = rng.clone();
        let a = (6.0 / dim as f64).sqrt();
        let weights = (0..dim).map(|_| r.uniform(-a, a)).collect();
        let b = 1.0 / (dim as f64).sqrt();
        Self {
            weights,
            bias: r.uniform(-b, b),
        }
    }

    pub fn apply(&self, pooled: &[f64]) -> f64 {
        self.bias + pooled.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }
}

/// A fine-tuned encoder with its head and the target scaling used in training.
#[derive(Clone, Debug)]
pub struct FinetunedModel {
    pub encoder: EncoderParams,
    pub head: LinearHead,
    pub target_mean: f64,
    pub target_scale: f64,
}

impl FinetunedModel {
    pub fn predict_patch(&self, patch: &ImageBuffer) -> Result<f64> {
        let pooled = self.encoder.embed(patch)?;
        Ok(self.target_mean + self.target_scale * self.head.apply(&pooled))
    }

    /// Five-crop averaged score.
    pub fn predict(&self, img: &ImageBuffer) -> Result<f64> {
        five_crop_score(img, self.encoder.config().input_size, |p| self.predict_patch(p))
    }
}

fn prepare(img: &ImageBuffer, cfg: &FinetuneConfig) -> Result<ImageBuffer> {
    match cfg.resize_short_edge {
        None => Ok(img.clone()),
        Some(edge) => {
            let (h, w) = img.dims();
            let s = edge as f64 / h.min(w) as f64;
            let (nh, nw) = ((h as f64 * s).round() as usize, (w as f64 * s).round() as usize);
            resize_bilinear(img, nh.max(edge), nw.max(edge))
        }
    }
}

fn random_patch(img: &ImageBuffer, size: usize, rng: &mut RngStream) -> Result<ImageBuffer> {
    let (h, w) = img.dims();
    if h < size || w < size {
        return Err(Error::invalid(format!("image {h}x{w} smaller than crop {size}")));
    }
    let top = rng.int_range(0, h - size);
    let left = rng.int_range(0, w - size);
    let p = crop(img, top, left, size, size)?;
    Ok(if rng.bernoulli(0.5) { flip_horizontal(&p) } else { p })
}

/// Trains encoder and a fresh head on `train` items with AdamW and cosine decay.
pub fn finetune_split(
    params: &EncoderParams,
    images: &[ImageBuffer],
    scores: &[f64],
    train: &[usize],
    cfg: &FinetuneConfig,
    rng: &RngStream,
) -> Result<FinetunedModel> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::invalid("fine-tuning needs at least two training items"));
    }
    let size = params.config().input_size;
    let hidden = params.config().hidden;
    let ys: Vec<f64> = train.iter().map(|&i| scores[i]).collect();
    let target_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = ys.iter().map(|y| (y - target_mean).powi(2)).sum::<f64>() / ys.len() as f64;
    let target_scale = if var > 0.0 { var.sqrt() } else { 1.0 };

    let mut model = FinetunedModel {
        encoder: params.clone(),
        head: LinearHead::init(hidden, &rng.derive("head")),
        target_mean,
        target_scale,
    };
    let n_enc = model.encoder.len();
    let mut state = AdamState::new(n_enc + hidden + 1);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut flat = vec![0.0; n_enc + hidden + 1];
    let mut grad = vec![0.0; n_enc + hidden + 1];

    for epoch in 0..cfg.epochs {
        let erng = rng.at("epoch", epoch as u64);
        let mut order = train.to_vec();
        erng.derive("order").shuffle(&mut order);
        for (s, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut srng = erng.at("step", s as u64);
            let patches = chunk
                .iter()
                .map(|&i| random_patch(&prepare(&images[i], cfg)?, size, &mut srng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&ImageBuffer> = patches.iter().collect();
            let cache = model.encoder.forward_batch(&refs)?;
            let w = Array1::from(model.head.weights.clone());
            let pred = cache.pooled.dot(&w) + model.head.bias;
            let b = chunk.len() as f64;
            let d_pred: Array1<f64> = chunk
                .iter()
                .zip(pred.iter())
                .map(|(&i, p)| 2.0 * (p - (scores[i] - target_mean) / target_scale) / b)
                .collect();
            let d_pooled: Array2<f64> = d_pred.view().insert_axis(Axis(1)).dot(&w.view().insert_axis(Axis(0)));
            let g_enc = model.encoder.backward_batch(&cache, None, Some(&d_pooled))?;
            grad[..n_enc].copy_from_slice(&g_enc);
            let gw = cache.pooled.t().dot(&d_pred);
            grad[n_enc..n_enc + hidden].copy_from_slice(gw.as_slice().expect("contiguous"));
            grad[n_enc + hidden] = d_pred.sum();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("fine-tune gradient at epoch {epoch}, step {s}")));
            }

            flat[..n_enc].copy_from_slice(model.encoder.values());
            flat[n_enc..n_enc + hidden].copy_from_slice(&model.head.weights);
            flat[n_enc + hidden] = model.head.bias;
            let lr = cosine_lr(cfg.lr, epoch * steps_per_epoch + s, total);
            adamw_step(&mut flat, &grad, &mut state, lr, &cfg.adamw)?;
            model.encoder.values_mut().copy_from_slice(&flat[..n_enc]);
            model.head.weights.copy_from_slice(&flat[n_enc..n_enc + hidden]);
            model.head.bias = flat[n_enc + hidden];
        }
    }
    Ok(model)
}

fn split_metrics(pred: &[f64], gt: &[f64], seed: u64) -> Result<SeedMetrics> {
    Ok(SeedMetrics {
        seed,
        srcc: srcc(pred, gt)?,
        plcc: plcc(pred, gt)?,
    })
}

/// End-to-end fine-tuning over `cfg.seeds` random splits (split seed = index),
/// evaluated with five-crop averaging on each held-out split.
pub fn finetune(params: &EncoderParams, set: &ScoredSet, cfg: &FinetuneConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let scores = set.scores();
    let prepared = set.images.iter().map(|i| prepare(i, cfg)).collect::<Result<Vec<_>>>()?;
    let per_seed = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let (train, test) = random_split(scores.len(), seed, cfg.test_fraction)?;
            let rng = RngStream::new(seed).derive("finetune");
            let model = finetune_split(params, &set.images, &scores, &train, cfg, &rng)?;
            let pred = test.iter().map(|&i| model.predict(&prepared[i])).collect::<Result<Vec<_>>>()?;
            let gt: Vec<f64> = test.iter().map(|&i| scores[i]).collect();
            split_metrics(&pred, &gt, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_seeds(per_seed)
}

/// Metrics of the untrained fresh head on frozen features, per split. This is
/// what `finetune` reports with zero epochs.
pub fn random_head_baseline(params: &EncoderParams, set: &ScoredSet, cfg: &FinetuneConfig) -> Result<MetricsReport> {
    let scores = set.scores();
    let prepared = set.images.iter().map(|i| prepare(i, cfg)).collect::<Result<Vec<_>>>()?;
    let features = extract_features(params, &prepared)?;
    let per_seed = (0..cfg.seeds as u64)
        .map(|seed| {
            let (_, test) = random_split(scores.len(), seed, cfg.test_fraction)?;
            let head = LinearHead::init(params.config().hidden, &RngStream::new(seed).derive("finetune").derive("head"));
            let pred: Vec<f64> = test.iter().map(|&i| head.apply(&features.row(i).to_vec())).collect();
            let gt: Vec<f64> = test.iter().map(|&i| scores[i]).collect();
            split_metrics(&pred, &gt, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_seeds(per_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{gen_synthetic_bench, SyntheticBenchSpec};
    use crate::model::EncoderConfig;

    fn small_set() -> (EncoderParams, ScoredSet) {
        let spec = SyntheticBenchSpec {
            size: 24,
            ..SyntheticBenchSpec::default()
        };
        let set = gen_synthetic_bench(&spec, 2, 3).unwrap();
        let cfg = EncoderConfig {
            input_size: 16,
            patch: 4,
            hidden: 8,
            feature_dim: 4,
            center_tokens: true,
        };
        (EncoderParams::init(cfg, &RngStream::new(4)).unwrap(), set)
    }

    #[test]
    fn zero_epochs_equals_random_head_baseline() {
        let (p, set) = small_set();
        let cfg = FinetuneConfig {
            epochs: 0,
            seeds: 4,
            ..FinetuneConfig::default()
        };
        let a = finetune(&p, &set, &cfg).unwrap();
        let b = random_head_baseline(&p, &set, &cfg).unwrap();
        for (x, y) in a.per_seed.iter().zip(&b.per_seed) {
            assert!((x.srcc - y.srcc).abs() < 1e-9);
            assert!((x.plcc - y.plcc).abs() < 1e-9);
        }
    }

    #[test]
    fn training_reduces_train_error() {
        let (p, set) = small_set();
        let scores = set.scores();
        let train: Vec<usize> = (0..scores.len()).collect();
        let rng = RngStream::new(1);
        let mse = |m: &FinetunedModel| {
            train
                .iter()
                .map(|&i| (m.predict(&set.images[i]).unwrap() - scores[i]).powi(2))
                .sum::<f64>()
        };
        let cfg0 = FinetuneConfig {
            epochs: 0,
            ..FinetuneConfig::default()
        };
        let cfg = FinetuneConfig {
            epochs: 100,
            batch_size: 8,
            lr: 1e-2,
            ..FinetuneConfig::default()
        };
        let before = finetune_split(&p, &set.images, &scores, &train, &cfg0, &rng).unwrap();
        let after = finetune_split(&p, &set.images, &scores, &train, &cfg, &rng).unwrap();
        assert!(mse(&after) < 0.8 * mse(&before));
    }

    #[test]
    fn resize_keeps_aspect_ratio() {
        let img = ImageBuffer::filled(30, 60, 0.5);
        let cfg = FinetuneConfig {
            resize_short_edge: Some(20),
            ..FinetuneConfig::default()
        };
        assert_eq!(prepare(&img, &cfg).unwrap().dims(), (20, 40));
    }
}
