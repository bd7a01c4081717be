use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{five_crops, median, plcc, random_split, srcc, ScoredSet};
use crate::imgproc::{crop, ImageBuffer};
use crate::model::{Encoder, EncoderParams};

/// Pooled backbone features averaged over the five crops of each image.
/// The projection head is not used.
pub fn extract_features(params: &EncoderParams, images: &[ImageBuffer]) -> Result<Array2<f64>> {
    let size = params.config().input_size;
    let hidden = params.config().hidden;
    let rows: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| {
            let crops = five_crops(img.height(), img.width(), size)?
                .iter()
                .map(|r| crop(img, r.top, r.left, r.height, r.width))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&ImageBuffer> = crops.iter().collect();
            let cache = params.forward_batch(&refs)?;
            Ok(cache.pooled.mean_axis(ndarray::Axis(0)).expect("five rows").to_vec())
        })
        .collect::<Result<_>>()?;
    Ok(Array2::from_shape_vec((images.len(), hidden), rows.concat()).expect("row lengths"))
}

/// Ridge regressor on standardized features with an unpenalized intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl RidgeModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept
            + x.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((v, m), s), w)| (v - m) / s * w)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| self.predict_row(&r.to_vec())).collect()
    }
}

/// Solves `(Z^T Z + lambda I) w = Z^T (y - mean y)` on standardized `Z`.
/// Constant feature columns are centered but not scaled. `lambda = inf`
/// gives zero weights; `lambda = 0` on a rank-deficient design is an error.
pub fn fit_ridge(x: &Array2<f64>, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    let (n, d) = x.dim();
    if n == 0 || y.len() != n {
        return Err(Error::invalid(format!("{n} feature rows for {} targets", y.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("ridge lambda {lambda} must be non-negative")));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = x.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if var > 1e-24 { var.sqrt() } else { 1.0 }
        })
        .collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if lambda == f64::INFINITY {
        return Ok(RidgeModel {
            mean,
            scale,
            weights: vec![0.0; d],
            intercept: y_mean,
        });
    }
    let z = DMatrix::from_fn(n, d, |i, j| (x[[i, j]] - mean[j]) / scale[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = z.transpose() * &z;
    let rhs = z.transpose() * yc;
    if lambda == 0.0 {
        let svd = gram.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > smax * 1e-12 * d as f64).count();
        if rank < d {
            return Err(Error::RankDeficient(format!(
                "design has rank {rank} < {d} features; use a ridge lambda > 0"
            )));
        }
    }
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let w = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("normal equations are not positive definite; use lambda > 0".into()))?
        .solve(&rhs);
    Ok(RidgeModel {
        mean,
        scale,
        weights: w.iter().copied().collect(),
        intercept: y_mean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub lambda: f64,
    pub seeds: usize,
    pub test_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            seeds: 20,
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub srcc: f64,
    pub plcc: f64,
}

/// Per-split metrics and their medians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_seed: Vec<SeedMetrics>,
    pub median_srcc: f64,
    pub median_plcc: f64,
}

impl MetricsReport {
    pub fn from_seeds(per_seed: Vec<SeedMetrics>) -> Result<Self> {
        let s: Vec<f64> = per_seed.iter().map(|m| m.srcc).collect();
        let p: Vec<f64> = per_seed.iter().map(|m| m.plcc).collect();
        Ok(Self {
            median_srcc: median(&s)?,
            median_plcc: median(&p)?,
            per_seed,
        })
    }
}

/// Ridge probe on precomputed features over `cfg.seeds` random splits
/// (split seed = index).
pub fn probe_features(features: &Array2<f64>, scores: &[f64], cfg: &ProbeConfig) -> Result<MetricsReport> {
    let per_seed = (0..cfg.seeds as u64)
        .map(|seed| {
            let (train, test) = random_split(scores.len(), seed, cfg.test_fraction)?;
            let xtr = features.select(ndarray::Axis(0), &train);
            let ytr: Vec<f64> = train.iter().map(|&i| scores[i]).collect();
            let model = fit_ridge(&xtr, &ytr, cfg.lambda)?;
            let pred = model.predict(&features.select(ndarray::Axis(0), &test));
            let gt: Vec<f64> = test.iter().map(|&i| scores[i]).collect();
            Ok(SeedMetrics {
                seed,
                srcc: srcc(&pred, &gt)?,
                plcc: plcc(&pred, &gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_seeds(per_seed)
}

/// Frozen-backbone linear probe of `params` on `set`.
pub fn linear_probe(params: &EncoderParams, set: &ScoredSet, cfg: &ProbeConfig) -> Result<MetricsReport> {
    let features = extract_features(params, &set.images)?;
    probe_features(&features, &set.scores(), cfg)
}
