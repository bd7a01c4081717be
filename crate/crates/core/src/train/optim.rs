use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(params: &[f64], grads: &[f64], state_len: usize) -> Result<()> {
    if params.len() != grads.len() || params.len() != state_len {
        return Err(Error::invalid(format!(
            "optimizer shapes differ: params {}, grads {}, state {state_len}",
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient {i} is {}", grads[i])));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(len: usize) -> Self {
        Self { velocity: vec![0.0; len] }
    }
}

/// SGD with heavy-ball momentum and coupled L2 decay:
/// `v <- momentum v + g + wd p`, `p <- p - lr v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], state: &mut SgdState, lr: f64, wd: f64, momentum: f64) -> Result<()> {
    check(params, grads, state.velocity.len())?;
    if ![lr, wd, momentum].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("sgd hyperparameter".into()));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        *v = momentum * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Adam with decoupled weight decay: `p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)`.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamWConfig) -> Result<()> {
    check(params, grads, state.m.len())?;
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let update = (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        *p -= lr * (update + cfg.weight_decay * *p);
    }
    Ok(())
}

/// `base * factor^(number of milestones <= epoch)`.
pub fn step_lr(base: f64, epoch: usize, milestones: &[usize], factor: f64) -> f64 {
    base * factor.powi(milestones.iter().filter(|&&m| m <= epoch).count() as i32)
}

/// Cosine annealing from `base` at step 0 to 0 at step `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = step.min(total) as f64 / total as f64;
    base * 0.5 * (1.0 + (PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_and_momentum_carry() {
        let mut p = vec![1.0, -2.0];
        let mut s = SgdState::new(2);
        sgd_step(&mut p, &[0.5, 1.0], &mut s, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, vec![1.0 - 0.05, -2.0 - 0.1]);

        let mut p = vec![0.0];
        let mut s = SgdState { velocity: vec![2.0] };
        sgd_step(&mut p, &[0.0], &mut s, 0.1, 0.0, 0.9).unwrap();
        assert!((p[0] + 0.1 * 0.9 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_simulation() {
        // f(x) = x^2, g = 2x, lr 0.1, momentum 0.9: hand recurrence
        let mut x = 1.0f64;
        let mut v = 0.0f64;
        let mut expected = Vec::new();
        for _ in 0..10 {
            v = 0.9 * v + 2.0 * x;
            x -= 0.1 * v;
            expected.push(x);
        }
        let known = [
            0.8, 0.46, 0.062, -0.3086, -0.58042, -0.708_974, -0.682_877_8, -0.522_815_66, -0.274_196_602, 0.004_399_870_6,
        ];
        for (e, k) in expected.iter().zip(known) {
            assert!((e - k).abs() < 1e-12);
        }
        let mut p = vec![1.0];
        let mut s = SgdState::new(1);
        for e in expected {
            let g = [2.0 * p[0]];
            sgd_step(&mut p, &g, &mut s, 0.1, 0.0, 0.9).unwrap();
            assert_eq!(p[0], e);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut s = SgdState::new(2);
        assert!(sgd_step(&mut [0.0, 0.0], &[f64::NAN, 0.0], &mut s, 0.1, 0.0, 0.9).is_err());
        assert!(sgd_step(&mut [0.0], &[0.0], &mut s, 0.1, 0.0, 0.9).is_err());
    }

    #[test]
    fn schedules() {
        assert_eq!(cosine_lr(0.5, 0, 100), 0.5);
        assert!(cosine_lr(0.5, 100, 100).abs() < 1e-16);
        assert!((cosine_lr(0.5, 50, 100) - 0.25).abs() < 1e-15);
        let lr = |e| step_lr(1.0, e, &[18, 24], 0.1);
        assert_eq!(lr(0), 1.0);
        assert_eq!(lr(17), 1.0);
        assert!((lr(18) - 0.1).abs() < 1e-15);
        assert!((lr(29) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn adamw_first_step_is_sign_sized() {
        let mut p = vec![1.0, 1.0];
        let mut s = AdamState::new(2);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &[3.0, -0.01], &mut s, 0.1, &cfg).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-5);
        let mut q = vec![2.0];
        let mut s = AdamState::new(1);
        adamw_step(&mut q, &[0.0], &mut s, 0.1, &AdamWConfig::default()).unwrap();
        assert!((q[0] - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
    }
}
