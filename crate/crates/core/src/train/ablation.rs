use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::pretrain::{init_state, pretrain};
use super::probe::{linear_probe, MetricsReport, ProbeConfig};
use crate::degradation::{Category, OpKind};
use crate::error::{Error, Result};
use crate::eval::ScoredSet;

/// One arm of an ablation. With `pretrain` off the encoder initialized from
/// `config` is probed as is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub config: TrainConfig,
    pub pretrain: bool,
}

impl Variant {
    fn with(name: &str, base: &TrainConfig, f: impl FnOnce(&mut TrainConfig)) -> Self {
        let mut cfg = base.clone();
        f(&mut cfg);
        Self {
            name: name.into(),
            config: cfg,
            pretrain: true,
        }
    }

    pub fn random_init(name: &str, base: &TrainConfig) -> Self {
        Self {
            name: name.into(),
            config: base.clone(),
            pretrain: false,
        }
    }
}

/// Composition of negatives: both, inter only, intra only, none.
pub fn negative_variants(base: &TrainConfig) -> Vec<Variant> {
    vec![
        Variant::with("intra+inter", base, |c| {
            c.ablation.use_intra_negatives = true;
            c.ablation.use_inter_negatives = true;
        }),
        Variant::with("inter_only", base, |c| {
            c.ablation.use_intra_negatives = false;
            c.ablation.use_inter_negatives = true;
        }),
        Variant::with("intra_only", base, |c| {
            c.ablation.use_intra_negatives = true;
            c.ablation.use_inter_negatives = false;
        }),
        Variant::random_init("none", base),
    ]
}

/// Composition strategy: skip + shuffle + two-order, dropping one switch at a
/// time down to the fixed sequence.
pub fn strategy_variants(base: &TrainConfig) -> Vec<Variant> {
    let set = |skip: bool, shuffle: bool, two: bool| {
        move |c: &mut TrainConfig| {
            c.ablation.enable_skip = skip;
            c.ablation.enable_shuffle = shuffle;
            c.ablation.enable_two_order = two;
        }
    };
    vec![
        Variant::with("skip+shuffle+two_order", base, set(true, true, true)),
        Variant::with("skip+shuffle", base, set(true, true, false)),
        Variant::with("skip", base, set(true, false, false)),
        Variant::with("fixed_sequence", base, set(false, false, false)),
    ]
}

fn grid_name(first: Category, second: Category) -> String {
    format!("grid_{}_{}", first.name(), second.name())
}

/// First-order fixed compositions over operator categories: every operator
/// of `first`, then every operator of `second` (once on the diagonal), no
/// skips and no shuffling.
pub fn category_grid_variants(base: &TrainConfig) -> Vec<Variant> {
    let mut out = Vec::new();
    for first in Category::ALL {
        for second in Category::ALL {
            out.push(Variant::with(&grid_name(first, second), base, |c| {
                let mut ops = OpKind::in_category(first);
                if second != first {
                    ops.extend(OpKind::in_category(second));
                }
                c.space.ops = ops;
                c.space.use_all_ops = true;
                c.ablation.enable_skip = false;
                c.ablation.enable_shuffle = false;
                c.ablation.enable_two_order = false;
            }));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub name: String,
    pub probe: MetricsReport,
    /// Mean loss over the last epoch; absent without pretraining.
    pub final_loss: Option<f64>,
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

/// Pretrains (or not) and probes one variant. Outputs go to `out/<name>`.
pub fn run_variant(v: &Variant, bench: &ScoredSet, probe: &ProbeConfig, out: Option<&Path>) -> Result<AblationResult> {
    let dir = out.map(|o| o.join(sanitize(&v.name)));
    if let Some(d) = &dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let (params, final_loss) = if !v.pretrain {
        (init_state(&v.config)?.encoder.query, None)
    } else {
        let (state, trace) = pretrain(&v.config, dir.as_deref())?;
        let last: Vec<f64> = trace.iter().filter(|r| r.epoch + 1 == state.epochs_done).map(|r| r.loss).collect();
        let loss = (!last.is_empty()).then(|| last.iter().sum::<f64>() / last.len() as f64);
        (state.encoder.query, loss)
    };
    let result = AblationResult {
        name: v.name.clone(),
        probe: linear_probe(&params, bench, probe)?,
        final_loss,
    };
    if let Some(d) = &dir {
        let json = serde_json::to_string_pretty(&result).map_err(|e| Error::Format(e.to_string()))?;
        let path = d.join("metrics.json");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok(result)
}

/// Runs every variant in order. Variants whose configuration matches an
/// earlier one reuse its result.
pub fn run_ablation(
    variants: &[Variant],
    bench: &ScoredSet,
    probe: &ProbeConfig,
    out: Option<&Path>,
) -> Result<Vec<AblationResult>> {
    let mut seen: HashMap<String, AblationResult> = HashMap::new();
    let mut results = Vec::with_capacity(variants.len());
    for v in variants {
        let key = serde_json::to_string(&(&v.config, v.pretrain)).map_err(|e| Error::Format(e.to_string()))?;
        let r = match seen.get(&key) {
            Some(prev) => AblationResult {
                name: v.name.clone(),
                ..prev.clone()
            },
            None => {
                let r = run_variant(v, bench, probe, out)?;
                seen.insert(key, r.clone());
                r
            }
        };
        results.push(r);
    }
    if let Some(o) = out {
        let json = serde_json::to_string_pretty(&results).map_err(|e| Error::Format(e.to_string()))?;
        let path = o.join("ablation.json");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok(results)
}

/// Median probe SRCC per (first, second) category pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryGrid {
    pub categories: Vec<Category>,
    /// Row = first category, column = second.
    pub srcc: Vec<Vec<Option<f64>>>,
}

impl CategoryGrid {
    pub fn from_results(results: &[AblationResult]) -> Self {
        let srcc = Category::ALL
            .iter()
            .map(|&a| {
                Category::ALL
                    .iter()
                    .map(|&b| {
                        let name = grid_name(a, b);
                        results.iter().find(|r| r.name == name).map(|r| r.probe.median_srcc)
                    })
                    .collect()
            })
            .collect();
        Self {
            categories: Category::ALL.to_vec(),
            srcc,
        }
    }

    /// Tab-separated table with a header row.
    pub fn to_table(&self) -> String {
        let mut s = String::from("first\\second");
        for c in &self.categories {
            s.push('\t');
            s.push_str(c.name());
        }
        s.push('\n');
        for (c, row) in self.categories.iter().zip(&self.srcc) {
            s.push_str(c.name());
            for v in row {
                match v {
                    Some(x) => s.push_str(&format!("\t{x:.4}")),
                    None => s.push_str("\t-"),
                }
            }
            s.push('\n');
        }
        s
    }
}
