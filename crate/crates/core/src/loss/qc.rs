use ndarray::{Array2, ArrayView2};

use super::{dot, logsumexp, softmax, LossConfig, LossForm, MomentumQueue};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImageTerms {
    pub term1: f64,
    pub term2: f64,
}

impl ImageTerms {
    pub fn total(&self) -> f64 {
        self.term1 + self.term2
    }
}

#[derive(Clone, Debug)]
pub struct QcOutput {
    /// Mean over images of `term1 + term2`.
    pub loss: f64,
    pub term1: f64,
    pub term2: f64,
    pub per_image: Vec<ImageTerms>,
    /// Gradient of `loss` with respect to each query row.
    pub grad_queries: Array2<f64>,
    /// Gradient of `loss` with respect to each key row. Queue entries never
    /// receive gradient.
    pub grad_keys: Array2<f64>,
}

/// Quality-aware contrastive loss.
///
/// Rows `n * views + k` of `queries` / `keys` are the query and key features
/// of view `k` of image `n`; `image_ids[n]` tags image `n` so that queue
/// keys from the same image are left out of its content-negative sum.
pub fn qc_loss(
    queries: ArrayView2<f64>,
    keys: ArrayView2<f64>,
    image_ids: &[u64],
    views: usize,
    queue: &MomentumQueue,
    cfg: &LossConfig,
) -> Result<QcOutput> {
    cfg.validate()?;
    let (queries, keys) = (queries.as_standard_layout().into_owned(), keys.as_standard_layout().into_owned());
    let b = image_ids.len();
    let d = queries.ncols();
    if b == 0 || views == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if queries.dim() != (b * views, d) || keys.dim() != (b * views, d) {
        return Err(Error::invalid(format!(
            "features are {:?} / {:?}, expected {} rows",
            queries.dim(),
            keys.dim(),
            b * views
        )));
    }
    let term1_on = cfg.term1_enabled();
    if term1_on && views < 2 {
        return Err(Error::invalid("degradation negatives need at least 2 views"));
    }
    if cfg.use_inter {
        if queue.is_empty() {
            return Err(Error::invalid("content negatives need a non-empty queue"));
        }
        if queue.dim() != d {
            return Err(Error::invalid(format!("queue dim {} != feature dim {d}", queue.dim())));
        }
    }
    let tau = cfg.temperature;
    let (qkeys, qids) = queue.slots();
    let queue_rows = qids.len();
    // Similarities of every query to every queue key, shared by all images.
    let u_all = if cfg.use_inter {
        let qv = ArrayView2::from_shape((queue_rows, d), qkeys).expect("queue layout");
        Some(queries.dot(&qv.t()) / tau)
    } else {
        None
    };

    let mut grad_queries = Array2::<f64>::zeros((b * views, d));
    let mut grad_keys = Array2::<f64>::zeros((b * views, d));
    let mut per_image = Vec::with_capacity(b);
    let scale = 1.0 / b as f64;

    for (n, &id) in image_ids.iter().enumerate() {
        let rows = n * views..(n + 1) * views;
        // s[k][l] = q_k . key_l / tau within image n
        let s: Vec<Vec<f64>> = rows
            .clone()
            .map(|r| rows.clone().map(|c| dot(row(&queries, r), row(&keys, c)) / tau).collect())
            .collect();
        // coefficient of each similarity in d(loss_n)
        let mut gs = vec![vec![0.0; views]; views];
        let eligible: Vec<usize> = if cfg.use_inter {
            (0..queue_rows).filter(|&m| qids[m] != id).collect()
        } else {
            Vec::new()
        };
        if cfg.use_inter && eligible.is_empty() {
            return Err(Error::invalid(format!("queue holds no content negatives for image {id}")));
        }
        let u: Vec<Vec<f64>> = match &u_all {
            Some(u_all) => rows.clone().map(|r| eligible.iter().map(|&m| u_all[[r, m]]).collect()).collect(),
            None => Vec::new(),
        };
        let mut gu = vec![vec![0.0; eligible.len()]; if cfg.use_inter { views } else { 0 }];
        let mut terms = ImageTerms::default();

        match cfg.form {
            LossForm::RatioSum => {
                if term1_on {
                    let mut r = vec![0.0; views];
                    let mut b_kl = vec![Vec::new(); views];
                    for k in 0..views {
                        let others: Vec<f64> = (0..views).filter(|&l| l != k).map(|l| s[k][l]).collect();
                        r[k] = s[k][k] - logsumexp(&others);
                        b_kl[k] = softmax(&others);
                    }
                    terms.term1 = -cfg.beta * logsumexp(&r);
                    let a = softmax(&r);
                    for k in 0..views {
                        gs[k][k] -= cfg.beta * a[k];
                        for (j, l) in (0..views).filter(|&l| l != k).enumerate() {
                            gs[k][l] += cfg.beta * a[k] * b_kl[k][j];
                        }
                    }
                }
                if cfg.use_inter {
                    let t: Vec<f64> = (0..views).map(|k| s[k][k] - logsumexp(&u[k])).collect();
                    terms.term2 = -logsumexp(&t);
                    let c = softmax(&t);
                    for k in 0..views {
                        gs[k][k] -= c[k];
                        for (g, e) in gu[k].iter_mut().zip(softmax(&u[k])) {
                            *g += c[k] * e;
                        }
                    }
                }
            }
            LossForm::InfonceStyle => {
                let inv_k = 1.0 / views as f64;
                if term1_on {
                    for k in 0..views {
                        terms.term1 += cfg.beta * inv_k * (logsumexp(&s[k]) - s[k][k]);
                        for (l, p) in softmax(&s[k]).into_iter().enumerate() {
                            gs[k][l] += cfg.beta * inv_k * (p - if l == k { 1.0 } else { 0.0 });
                        }
                    }
                }
                if cfg.use_inter {
                    for k in 0..views {
                        let mut logits = Vec::with_capacity(1 + u[k].len());
                        logits.push(s[k][k]);
                        logits.extend_from_slice(&u[k]);
                        terms.term2 += inv_k * (logsumexp(&logits) - s[k][k]);
                        let p = softmax(&logits);
                        gs[k][k] += inv_k * (p[0] - 1.0);
                        for (g, pm) in gu[k].iter_mut().zip(&p[1..]) {
                            *g += inv_k * pm;
                        }
                    }
                }
            }
        }
        if !terms.term1.is_finite() || !terms.term2.is_finite() {
            return Err(Error::NonFinite(format!("loss for image {id}")));
        }
        per_image.push(terms);

        let c = scale / tau;
        for k in 0..views {
            let qr = rows.start + k;
            for l in 0..views {
                let g = gs[k][l];
                if g == 0.0 {
                    continue;
                }
                let kr = rows.start + l;
                for j in 0..d {
                    grad_queries[[qr, j]] += c * g * keys[[kr, j]];
                    grad_keys[[kr, j]] += c * g * queries[[qr, j]];
                }
            }
            if cfg.use_inter {
                let mut gq = grad_queries.row_mut(qr);
                for (&m, &g) in eligible.iter().zip(&gu[k]) {
                    let key = &qkeys[m * d..(m + 1) * d];
                    for (gj, kj) in gq.iter_mut().zip(key) {
                        *gj += c * g * kj;
                    }
                }
            }
        }
    }

    let term1 = per_image.iter().map(|t| t.term1).sum::<f64>() * scale;
    let term2 = per_image.iter().map(|t| t.term2).sum::<f64>() * scale;
    Ok(QcOutput {
        loss: per_image.iter().map(ImageTerms::total).sum::<f64>() * scale,
        term1,
        term2,
        per_image,
        grad_queries,
        grad_keys,
    })
}

fn row(a: &Array2<f64>, r: usize) -> &[f64] {
    let cols = a.ncols();
    &a.as_slice().expect("standard layout")[r * cols..(r + 1) * cols]
}
