use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::ops::{apply_op, OpInstance, OpKind, OpParams};
use crate::error::{Error, Result};
use crate::imgproc::ImageBuffer;
use crate::rng::RngStream;

/// Sampling ranges for operator hyperparameters. Half-open conventions:
/// down-sampling draws from `[lo, hi)`, up-sampling from `(lo, hi]`, JPEG
/// quality uniformly from the closed integer range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamRanges {
    pub scale_jitter: (f64, f64),
    pub down_sample: (f64, f64),
    pub up_sample: (f64, f64),
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    pub hue: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub blur_sigma: (f64, f64),
    pub jpeg_quality: (u8, u8),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            scale_jitter: (0.5, 2.0),
            down_sample: (0.25, 1.0),
            up_sample: (1.0, 2.0),
            brightness: (0.6, 1.4),
            contrast: (0.6, 1.4),
            saturation: (0.6, 1.4),
            hue: (-0.1, 0.1),
            noise_sigma: (0.0, 0.1),
            blur_sigma: (0.0, 3.0),
            jpeg_quality: (10, 95),
        }
    }
}

impl ParamRanges {
    pub fn sample(&self, kind: OpKind, rng: &mut RngStream) -> OpParams {
        let u = |rng: &mut RngStream, (lo, hi): (f64, f64)| rng.uniform(lo, hi);
        match kind {
            OpKind::ScaleJitter => OpParams::ScaleJitter {
                scale: u(rng, self.scale_jitter),
            },
            OpKind::HorizontalFlip => OpParams::HorizontalFlip,
            OpKind::DownSample => OpParams::DownSample {
                factor: u(rng, self.down_sample),
            },
            OpKind::UpSample => {
                let (lo, hi) = self.up_sample;
                OpParams::UpSample {
                    factor: hi - rng.uniform(0.0, hi - lo),
                }
            }
            OpKind::ColorJitter => OpParams::ColorJitter {
                brightness: u(rng, self.brightness),
                contrast: u(rng, self.contrast),
                saturation: u(rng, self.saturation),
                hue: u(rng, self.hue),
            },
            OpKind::Grayscale => OpParams::Grayscale,
            OpKind::AddNoise => OpParams::AddNoise {
                sigma: u(rng, self.noise_sigma),
                seed: rng.next_u64(),
            },
            OpKind::Fuzzify => OpParams::Fuzzify {
                sigma: u(rng, self.blur_sigma),
            },
            OpKind::JpegCompress => {
                let (lo, hi) = self.jpeg_quality;
                OpParams::JpegCompress {
                    quality: rng.int_range(lo as usize, hi as usize) as u8,
                }
            }
        }
    }
}

/// The degradation space: which operators exist and how compositions are
/// drawn from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpaceConfig {
    pub ops: Vec<OpKind>,
    pub p_skip: f64,
    pub p_second_order: f64,
    pub shuffle: bool,
    /// Apply every operator in each order instead of a random subset.
    pub use_all_ops: bool,
    pub ranges: ParamRanges,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            ops: OpKind::ALL.to_vec(),
            p_skip: 0.25,
            p_second_order: 0.5,
            shuffle: true,
            use_all_ops: false,
            ranges: ParamRanges::default(),
        }
    }
}

impl SpaceConfig {
    /// Fixed-sequence variant: no skips, canonical order, one order.
    pub fn fixed_sequence() -> Self {
        Self {
            p_skip: 0.0,
            p_second_order: 0.0,
            shuffle: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::invalid("degradation space has no operators"));
        }
        let mut sorted = self.ops.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.ops.len() {
            return Err(Error::invalid("duplicate operator in degradation space"));
        }
        for (name, p) in [("p_skip", self.p_skip), ("p_second_order", self.p_second_order)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One or two orders of operator sequences, applied first to last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationPlan {
    pub orders: Vec<Vec<OpInstance>>,
}

impl DegradationPlan {
    pub fn single(ops: Vec<OpInstance>) -> Self {
        Self { orders: vec![ops] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.orders.is_empty() || self.orders.len() > 2 {
            return Err(Error::invalid(format!("plan has {} orders (1 or 2 allowed)", self.orders.len())));
        }
        for order in &self.orders {
            if order.is_empty() || order.len() > OpKind::ALL.len() {
                return Err(Error::invalid(format!("order of length {}", order.len())));
            }
            let mut kinds: Vec<OpKind> = order.iter().map(OpInstance::kind).collect();
            kinds.sort();
            kinds.dedup();
            if kinds.len() != order.len() {
                return Err(Error::invalid("operator repeated within one order"));
            }
            for op in order {
                op.params.validate()?;
            }
        }
        Ok(())
    }

    /// True when every operator is skipped, i.e. the plan is the identity.
    pub fn is_identity(&self) -> bool {
        self.orders.iter().flatten().all(|op| op.skip)
    }

    pub fn ops(&self) -> impl Iterator<Item = &OpInstance> {
        self.orders.iter().flatten()
    }
}

/// Draws a composition: the number of orders, then per order a subset size
/// uniform on `1..=|ops|` (all of them with `use_all_ops`), a uniform subset, a uniform permutation of it
/// (the order listed in `cfg.ops` when shuffling is off), skip flags and
/// parameters.
pub fn sample_plan(rng: &RngStream, cfg: &SpaceConfig) -> Result<DegradationPlan> {
    cfg.validate()?;
    let mut top = rng.derive("orders");
    let n_orders = if top.bernoulli(cfg.p_second_order) { 2 } else { 1 };
    let canonical = &cfg.ops;

    let orders = (0..n_orders)
        .map(|o| {
            let mut r = rng.at("order", o as u64);
            let size = if cfg.use_all_ops {
                canonical.len()
            } else {
                r.int_range(1, canonical.len())
            };
            let mut seq: Vec<OpKind> = r.subset(canonical.len(), size).into_iter().map(|i| canonical[i]).collect();
            if cfg.shuffle {
                r.shuffle(&mut seq);
            }
            seq.into_iter()
                .enumerate()
                .map(|(i, kind)| {
                    let mut op_rng = r.at("op", i as u64);
                    let skip = op_rng.bernoulli(cfg.p_skip);
                    OpInstance {
                        params: cfg.ranges.sample(kind, &mut op_rng),
                        skip,
                    }
                })
                .collect()
        })
        .collect();
    Ok(DegradationPlan { orders })
}

pub fn apply_plan(plan: &DegradationPlan, img: &ImageBuffer) -> Result<ImageBuffer> {
    plan.validate()?;
    let mut cur = img.clone();
    for op in plan.ops() {
        cur = apply_op(op, &cur)?;
    }
    Ok(cur)
}

/// One line of a degradation manifest: enough to regenerate the output
/// image from its source without re-sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub id: u64,
    pub source: String,
    pub output: String,
    pub seed: u64,
    pub plan: DegradationPlan,
}

pub fn write_plan_manifest<W: Write>(mut out: W, records: &[PlanRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_plan_manifest<R: BufRead>(input: R) -> Result<Vec<PlanRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PlanRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        rec.plan.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::resize_bilinear;

    fn checkerboard(n: usize) -> ImageBuffer {
        ImageBuffer::from_fn(n, n, |y, x, _| if (y / 2 + x / 2) % 2 == 0 { 0.9 } else { 0.1 })
    }

    #[test]
    fn all_skipped_plan_is_identity() {
        let cfg = SpaceConfig {
            p_skip: 1.0,
            p_second_order: 0.0,
            ..SpaceConfig::default()
        };
        let img = checkerboard(24);
        for seed in 0..20 {
            let plan = sample_plan(&RngStream::new(seed), &cfg).unwrap();
            assert_eq!(plan.orders.len(), 1);
            assert!(plan.is_identity());
            assert_eq!(apply_plan(&plan, &img).unwrap(), img);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = SpaceConfig::default();
        let a = sample_plan(&RngStream::new(42), &cfg).unwrap();
        let b = sample_plan(&RngStream::new(42), &cfg).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn grayscale_twice_equals_once() {
        let img = ImageBuffer::from_fn(9, 9, |y, x, c| ((y + 2 * x + 3 * c) % 7) as f64 / 6.0);
        let once = DegradationPlan::single(vec![OpInstance::new(OpParams::Grayscale)]);
        let twice = DegradationPlan {
            orders: vec![
                vec![OpInstance::new(OpParams::Grayscale)],
                vec![OpInstance::new(OpParams::Grayscale)],
            ],
        };
        assert_eq!(apply_plan(&once, &img).unwrap(), apply_plan(&twice, &img).unwrap());
    }

    #[test]
    fn down_up_equals_direct_resizes() {
        let img = checkerboard(32);
        let plan = DegradationPlan::single(vec![
            OpInstance::new(OpParams::DownSample { factor: 0.5 }),
            OpInstance::new(OpParams::UpSample { factor: 2.0 }),
        ]);
        let direct = resize_bilinear(&resize_bilinear(&img, 16, 16).unwrap(), 32, 32).unwrap();
        assert_eq!(apply_plan(&plan, &img).unwrap(), direct);
    }

    #[test]
    fn shuffle_frequency_matches_closed_form() {
        // P(shuffled order == canonical order | size i) = 1/i!, size uniform
        // on 1..=9, so P(differs) = 1 - (1/9) sum_i 1/i!.
        let cfg = SpaceConfig {
            p_second_order: 0.0,
            ..SpaceConfig::default()
        };
        let mut fact = 1.0;
        let mut same = 0.0;
        for i in 1..=9 {
            fact *= i as f64;
            same += 1.0 / 9.0 / fact;
        }
        let expected = 1.0 - same;
        let root = RngStream::new(7);
        let n = 10_000;
        let differs = (0..n)
            .filter(|&s| {
                let plan = sample_plan(&root.derive_index(s), &cfg).unwrap();
                let kinds: Vec<OpKind> = plan.orders[0].iter().map(OpInstance::kind).collect();
                let mut sorted = kinds.clone();
                sorted.sort();
                kinds != sorted
            })
            .count() as f64
            / n as f64;
        // binomial sd at n = 10,000 is ~0.005; allow 4 sd
        assert!((differs - expected).abs() < 0.02, "{differs} vs {expected}");
    }

    #[test]
    fn no_shuffle_keeps_canonical_order() {
        let cfg = SpaceConfig::fixed_sequence();
        for s in 0..50 {
            let plan = sample_plan(&RngStream::new(s), &cfg).unwrap();
            assert_eq!(plan.orders.len(), 1);
            assert!(plan.ops().all(|o| !o.skip));
            let kinds: Vec<OpKind> = plan.ops().map(OpInstance::kind).collect();
            assert!(kinds.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn manifest_round_trip() {
        let cfg = SpaceConfig::default();
        let records: Vec<PlanRecord> = (0..5)
            .map(|i| PlanRecord {
                id: i,
                source: format!("src/{i}.png"),
                output: format!("out/{i}.png"),
                seed: 11,
                plan: sample_plan(&RngStream::new(11).derive_index(i), &cfg).unwrap(),
            })
            .collect();
        let mut buf = Vec::new();
        write_plan_manifest(&mut buf, &records).unwrap();
        let back = read_plan_manifest(&buf[..]).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn invalid_plans_rejected() {
        let dup = DegradationPlan::single(vec![
            OpInstance::new(OpParams::Grayscale),
            OpInstance::new(OpParams::Grayscale),
        ]);
        assert!(dup.validate().is_err());
        assert!(DegradationPlan { orders: vec![] }.validate().is_err());
        let three = DegradationPlan {
            orders: vec![vec![OpInstance::new(OpParams::Grayscale)]; 3],
        };
        assert!(three.validate().is_err());
    }
}
