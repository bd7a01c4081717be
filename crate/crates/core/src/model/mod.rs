//! Encoder, projection head, feature normalization and the momentum
//! (key) encoder.

mod encoder;
mod params;

pub use encoder::{Encoder, EncoderCache, PatchMlp};
pub use params::{EncoderConfig, EncoderParams, Layer, LayerSlot};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// L2-normalizes `f`. A zero (or non-finite) vector is an error rather than
/// being nudged by an epsilon.
pub fn normalize(f: &[f64]) -> Result<Vec<f64>> {
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("feature norm {norm}")));
    }
    if norm == 0.0 {
        return Err(Error::DegenerateFeature("zero feature vector cannot be normalized".into()));
    }
    Ok(f.iter().map(|v| v / norm).collect())
}

/// Backpropagates `grad` (w.r.t. the normalized vector) through
/// `f = z / |z|`: `dz = (g - f (f . g)) / |z|`.
pub fn normalize_backward(z: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
    let f = normalize(z)?;
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = f.iter().zip(grad).map(|(a, b)| a * b).sum();
    Ok(f.iter().zip(grad).map(|(fi, gi)| (gi - fi * dot) / norm).collect())
}

/// Query encoder, key encoder and the momentum `m`. The key parameters only
/// ever change through [`EncoderState::momentum_update`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub query: EncoderParams,
    key: EncoderParams,
    pub momentum: f64,
}

impl EncoderState {
    /// Key encoder starts as an exact copy of the query encoder.
    pub fn new(query: EncoderParams, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum {momentum} outside [0, 1]")));
        }
        Ok(Self {
            key: query.clone(),
            query,
            momentum,
        })
    }

    pub fn from_parts(query: EncoderParams, key: EncoderParams, momentum: f64) -> Result<Self> {
        if query.config() != key.config() {
            return Err(Error::invalid("query and key encoders differ in shape"));
        }
        let mut s = Self::new(query, momentum)?;
        s.key = key;
        Ok(s)
    }

    pub fn key(&self) -> &EncoderParams {
        &self.key
    }

    /// `theta_k <- m theta_k + (1 - m) theta_q`, elementwise.
    pub fn momentum_update(&mut self) {
        let m = self.momentum;
        if m == 1.0 {
            return;
        }
        if m == 0.0 {
            self.key.values_mut().copy_from_slice(self.query.values());
            return;
        }
        for (k, &q) in self.key.values_mut().iter_mut().zip(self.query.values()) {
            if *k != q {
                *k = m * *k + (1.0 - m) * q;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(normalize(&[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::DegenerateFeature(_))));
        assert!(normalize(&[f64::NAN, 1.0]).is_err());
        let mut rng = RngStream::new(4);
        for _ in 0..100 {
            let f: Vec<f64> = (0..17).map(|_| rng.normal() * 10.0).collect();
            let n = normalize(&f).unwrap();
            let norm = n.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
            let c = rng.uniform(0.01, 100.0);
            let scaled: Vec<f64> = f.iter().map(|v| v * c).collect();
            for (a, b) in normalize(&scaled).unwrap().iter().zip(&n) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let z = [0.3, -1.2, 0.7, 2.0];
        let g = [0.5, 0.1, -0.4, 0.2];
        let analytic = normalize_backward(&z, &g).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let lp: f64 = normalize(&zp).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum();
            let lm: f64 = normalize(&zm).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!(((lp - lm) / (2.0 * h) - analytic[i]).abs() < 1e-8);
        }
    }

    fn scalar_state(k: f64, q: f64, m: f64) -> EncoderState {
        let cfg = EncoderConfig {
            input_size: 4,
            patch: 4,
            hidden: 1,
            feature_dim: 1,
            center_tokens: true,
        };
        let mut qp = EncoderParams::zeros(cfg.clone()).unwrap();
        let mut kp = EncoderParams::zeros(cfg).unwrap();
        qp.values_mut().fill(q);
        kp.values_mut().fill(k);
        EncoderState::from_parts(qp, kp, m).unwrap()
    }

    #[test]
    fn momentum_examples() {
        let mut s = scalar_state(0.25, 1.0, 1.0);
        s.momentum_update();
        assert!(s.key().values().iter().all(|&v| v == 0.25));

        let mut s = scalar_state(0.25, 0.8, 0.0);
        s.momentum_update();
        assert_eq!(s.key().values(), s.query.values());

        let mut s = scalar_state(0.0, 1.0, 0.999);
        s.momentum_update();
        assert!(s.key().values().iter().all(|&v| (v - 0.001).abs() < 1e-15));

        assert!(EncoderState::new(s.query.clone(), 1.5).is_err());
    }

    #[test]
    fn momentum_contracts_geometrically() {
        let mut s = scalar_state(0.0, 1.0, 0.9);
        let dist = |s: &EncoderState| {
            s.key()
                .values()
                .iter()
                .zip(s.query.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let mut prev = dist(&s);
        for _ in 0..50 {
            s.momentum_update();
            let d = dist(&s);
            assert!((d / prev - 0.9).abs() < 1e-9);
            prev = d;
        }
    }
}
