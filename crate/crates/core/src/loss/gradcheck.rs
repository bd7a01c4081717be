use ndarray::Array2;

use super::{infonce, qc_loss, LossConfig, MomentumQueue};
use crate::error::Result;
use crate::rng::RngStream;

const STEP: f64 = 1e-3;

/// Fourth-order central difference.
fn central(f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    Ok((f(-2.0 * STEP)? - 8.0 * f(-STEP)? + 8.0 * f(STEP)? - f(2.0 * STEP)?) / (12.0 * STEP))
}

fn unit_vector(d: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs()).max(1e-6)
    }
}

/// A seeded random loss instance: `images x views` query/key features and a
/// queue whose entries are partly tagged with batch image ids.
#[derive(Clone, Debug)]
pub struct QcInstance {
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    pub image_ids: Vec<u64>,
    pub views: usize,
    pub queue: MomentumQueue,
}

impl QcInstance {
    pub fn random(seed: u64, images: usize, views: usize, queue_len: usize, dim: usize) -> Result<Self> {
        let mut rng = RngStream::new(seed);
        let rows = images * views;
        let feats = |rng: &mut RngStream| {
            let data: Vec<f64> = (0..rows).flat_map(|_| unit_vector(dim, rng)).collect();
            Array2::from_shape_vec((rows, dim), data).expect("shape")
        };
        let queries = feats(&mut rng);
        let keys = feats(&mut rng);
        let image_ids: Vec<u64> = (0..images as u64).map(|n| 10 + 7 * n).collect();
        let mut queue = MomentumQueue::new(queue_len.max(1), dim)?;
        for m in 0..queue_len {
            let id = if m > 0 && rng.bernoulli(0.4) {
                image_ids[rng.below(images as u64) as usize]
            } else {
                1000 + m as u64
            };
            let k = unit_vector(dim, &mut rng);
            queue.push(&[(&k, id)])?;
        }
        Ok(Self {
            queries,
            keys,
            image_ids,
            views,
            queue,
        })
    }

    pub fn loss(&self, cfg: &LossConfig) -> Result<f64> {
        Ok(qc_loss(self.queries.view(), self.keys.view(), &self.image_ids, self.views, &self.queue, cfg)?.loss)
    }
}

/// Central differences on every query and key coordinate against the
/// analytic gradient; returns the largest relative error.
pub fn gradcheck_qc(cfg: &LossConfig, inst: &QcInstance) -> Result<f64> {
    let out = qc_loss(inst.queries.view(), inst.keys.view(), &inst.image_ids, inst.views, &inst.queue, cfg)?;
    let mut worst: f64 = 0.0;
    for which in 0..2 {
        let analytic = if which == 0 { &out.grad_queries } else { &out.grad_keys };
        for idx in 0..analytic.len() {
            let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
            let eval = |delta: f64| -> Result<f64> {
                let mut p = inst.clone();
                let target = if which == 0 { &mut p.queries } else { &mut p.keys };
                target[[r, c]] += delta;
                p.loss(cfg)
            };
            let numeric = central(eval)?;
            worst = worst.max(rel_err(analytic[[r, c]], numeric));
        }
    }
    Ok(worst)
}

/// Same check for InfoNCE on a random instance with `negatives` negatives.
pub fn gradcheck_infonce(seed: u64, negatives: usize, dim: usize, temperature: f64) -> Result<f64> {
    let mut rng = RngStream::new(seed);
    let feats: Vec<Vec<f64>> = (0..negatives + 2).map(|_| unit_vector(dim, &mut rng)).collect();
    let loss = |f: &[Vec<f64>]| infonce(&f[0], &f[1], &f[2..], temperature).map(|o| o.loss);
    let out = infonce(&feats[0], &feats[1], &feats[2..], temperature)?;
    let mut analytic = vec![out.grad_query, out.grad_positive];
    analytic.extend(out.grad_negatives);
    let mut worst: f64 = 0.0;
    for v in 0..feats.len() {
        for j in 0..dim {
            let numeric = central(|delta| {
                let mut f = feats.clone();
                f[v][j] += delta;
                loss(&f)
            })?;
            worst = worst.max(rel_err(analytic[v][j], numeric));
        }
    }
    Ok(worst)
}
