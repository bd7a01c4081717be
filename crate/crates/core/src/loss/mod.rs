//! InfoNCE, the quality-aware contrastive loss and the key queue.

mod gradcheck;
mod qc;
mod queue;

pub use gradcheck::{gradcheck_infonce, gradcheck_qc, QcInstance};
pub use qc::{qc_loss, ImageTerms, QcOutput};
pub(crate) use queue::QueueMeta;
pub use queue::{MomentumQueue, NO_IMAGE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// The quality-aware loss: `-log` of a sum of ratios, with
    /// the positive left out of the degradation-negative denominator.
    #[default]
    RatioSum,
    /// Conventional per-view mean of `-log softmax`, positive included in
    /// every denominator. Kept for comparisons.
    InfonceStyle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub temperature: f64,
    /// Weight of the degradation-negative term.
    pub beta: f64,
    pub form: LossForm,
    /// Degradation-based negatives (other views of the same image).
    pub use_intra: bool,
    /// Content-based negatives (queue keys from other images).
    pub use_inter: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            beta: 0.4,
            form: LossForm::RatioSum,
            use_intra: true,
            use_inter: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid(format!("temperature {} must be positive", self.temperature)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("beta {} must be non-negative", self.beta)));
        }
        if !self.use_intra && !self.use_inter {
            return Err(Error::invalid("at least one negative type must be enabled"));
        }
        Ok(())
    }

    pub(crate) fn term1_enabled(&self) -> bool {
        self.use_intra && self.beta > 0.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log sum exp` with max subtraction. `-inf` for an empty slice.
pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let l = logsumexp(xs);
    xs.iter().map(|x| (x - l).exp()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub grad_query: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// `-log(exp(q.k+ / t) / sum_i exp(q.k_i / t))`, positive included in the
/// denominator.
pub fn infonce(query: &[f64], positive: &[f64], negatives: &[Vec<f64>], temperature: f64) -> Result<InfoNceOutput> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature {temperature} must be positive")));
    }
    let d = query.len();
    if d == 0 {
        return Err(Error::invalid("empty feature"));
    }
    if positive.len() != d || negatives.iter().any(|n| n.len() != d) {
        return Err(Error::invalid("feature dimensions differ"));
    }
    let logits: Vec<f64> = std::iter::once(positive)
        .chain(negatives.iter().map(Vec::as_slice))
        .map(|k| dot(query, k) / temperature)
        .collect();
    let loss = logsumexp(&logits) - logits[0];
    let mut p = softmax(&logits);
    p[0] -= 1.0;
    let mut grad_query = vec![0.0; d];
    for (pi, k) in p.iter().zip(std::iter::once(positive).chain(negatives.iter().map(Vec::as_slice))) {
        for (g, kv) in grad_query.iter_mut().zip(k) {
            *g += pi * kv / temperature;
        }
    }
    let scaled = |c: f64| query.iter().map(|q| c * q / temperature).collect::<Vec<f64>>();
    Ok(InfoNceOutput {
        loss,
        grad_query,
        grad_positive: scaled(p[0]),
        grad_negatives: p[1..].iter().map(|&c| scaled(c)).collect(),
    })
}
