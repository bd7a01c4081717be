use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::degradation::SpaceConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::EncoderConfig;

/// Where pretraining images come from: a directory of PNG/PPM files, or
/// generated textures when `dir` is unset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub dir: Option<PathBuf>,
    pub count: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            dir: None,
            count: 256,
            size: 96,
            seed: 0,
        }
    }
}

/// Switches for the negative-composition and degradation-strategy
/// ablations. A disabled switch overrides the matching loss or space
/// setting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub use_intra_negatives: bool,
    pub use_inter_negatives: bool,
    pub enable_skip: bool,
    pub enable_shuffle: bool,
    pub enable_two_order: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_intra_negatives: true,
            use_inter_negatives: true,
            enable_skip: true,
            enable_shuffle: true,
            enable_two_order: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Views (degradation compositions) per image.
    pub views: usize,
    /// Learning rate at batch size 256.
    pub lr: f64,
    /// Multiply `lr` by `batch_size / 256`.
    pub scale_lr_by_batch: bool,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub sgd_momentum: f64,
    pub encoder_momentum: f64,
    pub queue_size: usize,
    /// Write a checkpoint every this many epochs (the last epoch always is).
    pub checkpoint_every: usize,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    pub space: SpaceConfig,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            epochs: 30,
            batch_size: 16,
            views: 4,
            lr: 0.03,
            scale_lr_by_batch: true,
            lr_decay_epochs: vec![18, 24],
            lr_decay_factor: 0.1,
            weight_decay: 1e-4,
            sgd_momentum: 0.9,
            encoder_momentum: 0.999,
            queue_size: 4096,
            checkpoint_every: 5,
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
            space: SpaceConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn base_lr(&self) -> f64 {
        if self.scale_lr_by_batch {
            self.lr * self.batch_size as f64 / 256.0
        } else {
            self.lr
        }
    }

    pub fn effective_loss(&self) -> LossConfig {
        LossConfig {
            use_intra: self.loss.use_intra && self.ablation.use_intra_negatives,
            use_inter: self.loss.use_inter && self.ablation.use_inter_negatives,
            ..self.loss.clone()
        }
    }

    pub fn effective_space(&self) -> SpaceConfig {
        let mut s = self.space.clone();
        if !self.ablation.enable_skip {
            s.p_skip = 0.0;
        }
        if !self.ablation.enable_shuffle {
            s.shuffle = false;
        }
        if !self.ablation.enable_two_order {
            s.p_second_order = 0.0;
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.batch_size == 0 || self.views == 0 {
            return bad("batch size and views must be positive".into());
        }
        for (name, v) in [
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("lr_decay_factor", self.lr_decay_factor),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return bad(format!("sgd momentum {} outside [0, 1)", self.sgd_momentum));
        }
        if !(0.0..=1.0).contains(&self.encoder_momentum) {
            return bad(format!("encoder momentum {} outside [0, 1]", self.encoder_momentum));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr decay epochs must be strictly increasing".into());
        }
        if self.lr_decay_epochs.last().is_some_and(|&e| e >= self.epochs) {
            return bad("lr decay epochs must be below the epoch count".into());
        }
        if self.queue_size == 0 || self.checkpoint_every == 0 {
            return bad("queue size and checkpoint interval must be positive".into());
        }
        let loss = self.effective_loss();
        loss.validate()?;
        if loss.use_intra && loss.beta > 0.0 && self.views < 2 {
            return bad("degradation negatives need at least 2 views".into());
        }
        if self.corpus.dir.is_none() && self.corpus.count < self.batch_size {
            return bad(format!(
                "corpus of {} images is smaller than one batch of {}",
                self.corpus.count, self.batch_size
            ));
        }
        self.encoder.validate()?;
        self.effective_space().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!((cfg.base_lr() - 0.001875).abs() < 1e-15);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = TrainConfig::from_toml("epochs = 4\nlr_decay_epochs = [2]\n[loss]\nbeta = 0.0\n").unwrap();
        assert_eq!(cfg.epochs, 4);
        assert_eq!(cfg.loss.beta, 0.0);
        assert_eq!(cfg.loss.temperature, 0.2);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_schedules() {
        let mut cfg = TrainConfig::default();
        cfg.lr_decay_epochs = vec![24, 18];
        assert!(cfg.validate().is_err());
        cfg.lr_decay_epochs = vec![18, 30];
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.views = 1;
        assert!(cfg.validate().is_err());
        cfg.ablation.use_intra_negatives = false;
        cfg.validate().unwrap();
    }

    #[test]
    fn ablation_switches_override() {
        let mut cfg = TrainConfig::default();
        cfg.ablation = Ablation {
            use_intra_negatives: false,
            enable_skip: false,
            enable_shuffle: false,
            enable_two_order: false,
            ..Ablation::default()
        };
        assert!(!cfg.effective_loss().use_intra);
        let s = cfg.effective_space();
        assert_eq!((s.p_skip, s.p_second_order, s.shuffle), (0.0, 0.0, false));
    }
}
