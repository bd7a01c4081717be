//! Quality-aware pretraining, linear probing, fine-tuning and ablations.

mod ablation;
mod checkpoint;
mod config;
mod finetune;
mod optim;
mod pretrain;
mod probe;

pub use ablation::{
    category_grid_variants, negative_variants, run_ablation, run_variant, strategy_variants, AblationResult, CategoryGrid, Variant,
};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, TrainState};
pub use config::{Ablation, CorpusConfig, TrainConfig};
pub use finetune::{finetune, finetune_split, random_head_baseline, FinetuneConfig, FinetunedModel, LinearHead};
pub use optim::{adamw_step, cosine_lr, sgd_step, step_lr, AdamState, AdamWConfig, SgdState};
pub use pretrain::{init_state, load_corpus, load_image_dir, pretrain, read_trace, Pretrainer, TraceRecord};
pub use probe::{extract_features, fit_ridge, linear_probe, probe_features, MetricsReport, ProbeConfig, RidgeModel, SeedMetrics};
