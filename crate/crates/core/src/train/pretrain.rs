use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, TrainState};
use super::config::TrainConfig;
use super::optim::{sgd_step, step_lr, SgdState};
use crate::error::{Error, Result};
use crate::eval::gen_corpus;
use crate::imgproc::{load_image, ImageBuffer};
use crate::loss::{qc_loss, MomentumQueue};
use crate::model::{normalize, normalize_backward, Encoder, EncoderParams, EncoderState};
use crate::rng::RngStream;
use crate::sampler::assemble_batch;

/// One optimization step of the loss trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub epoch: usize,
    pub term1: f64,
    pub term2: f64,
    pub loss: f64,
    pub queue_fill: usize,
    pub grad_norm: f64,
    pub lr: f64,
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("trace line {}: {e}", i + 1))))
        .collect()
}

/// Loads every `.png`/`.ppm` in `dir`, sorted by file name.
pub fn load_image_dir(dir: &Path) -> Result<Vec<(PathBuf, ImageBuffer)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png" | "ppm")
            )
        })
        .collect();
    paths.sort();
    paths.into_iter().map(|p| load_image(&p).map(|img| (p, img))).collect()
}

pub fn load_corpus(cfg: &TrainConfig) -> Result<Vec<ImageBuffer>> {
    match &cfg.corpus.dir {
        Some(dir) => Ok(load_image_dir(dir)?.into_iter().map(|(_, img)| img).collect()),
        None => Ok(gen_corpus(cfg.corpus.seed, cfg.corpus.count, cfg.corpus.size)),
    }
}

/// Fresh state: seeded encoder, key encoder copied from it, zero velocity
/// and a queue filled with random unit keys.
pub fn init_state(cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let query = EncoderParams::init(cfg.encoder.clone(), &root.derive("init"))?;
    let len = query.len();
    Ok(TrainState {
        config: cfg.clone(),
        epochs_done: 0,
        step: 0,
        encoder: EncoderState::new(query, cfg.encoder_momentum)?,
        sgd: SgdState::new(len),
        queue: MomentumQueue::random(cfg.queue_size, cfg.encoder.feature_dim, &root.derive("queue"))?,
    })
}

fn normalized_rows(out: &Array2<f64>) -> Result<Array2<f64>> {
    let mut n = out.clone();
    for mut row in n.rows_mut() {
        let v = normalize(row.as_slice().expect("standard layout"))?;
        row.as_slice_mut().expect("standard layout").copy_from_slice(&v);
    }
    Ok(n)
}

/// Drives pretraining epoch by epoch. Randomness for epoch `e`, step `s`
/// comes from `seed -> "epoch" e -> "step" s`, so a resumed run replays
/// exactly what an unbroken one would have done.
pub struct Pretrainer {
    pub state: TrainState,
    corpus: Vec<ImageBuffer>,
    out_dir: Option<PathBuf>,
    trace: Vec<TraceRecord>,
}

impl Pretrainer {
    pub fn new(state: TrainState, corpus: Vec<ImageBuffer>, out_dir: Option<&Path>) -> Result<Self> {
        state.config.validate()?;
        if corpus.len() < state.config.batch_size {
            return Err(Error::invalid(format!(
                "corpus of {} images is smaller than one batch of {}",
                corpus.len(),
                state.config.batch_size
            )));
        }
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join("config.toml");
            fs::write(&cfg_path, state.config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        }
        Ok(Self {
            state,
            corpus,
            out_dir: out_dir.map(Path::to_path_buf),
            trace: Vec::new(),
        })
    }

    /// Records produced by this driver (not those of earlier sessions).
    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.corpus.len() / self.state.config.batch_size
    }

    fn step(&mut self, epoch: usize, step_rng: &RngStream, ids: &[usize], lr: f64) -> Result<TraceRecord> {
        let cfg = &self.state.config;
        let loss_cfg = cfg.effective_loss();
        let space = cfg.effective_space();
        let images: Vec<(u64, &ImageBuffer)> = ids.iter().map(|&i| (i as u64, &self.corpus[i])).collect();
        let batch = assemble_batch(&images, cfg.views, step_rng, cfg.encoder.input_size, &space)?;
        let q_refs: Vec<&ImageBuffer> = batch.queries.iter().collect();
        let k_refs: Vec<&ImageBuffer> = batch.keys.iter().collect();
        let q_cache = self.state.encoder.query.forward_batch(&q_refs)?;
        let k_cache = self.state.encoder.key().forward_batch(&k_refs)?;
        let qn = normalized_rows(&q_cache.output)?;
        let kn = normalized_rows(&k_cache.output)?;
        let image_ids = batch.image_ids();
        let out = qc_loss(qn.view(), kn.view(), &image_ids, cfg.views, &self.state.queue, &loss_cfg)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {} at epoch {epoch}", out.loss)));
        }
        let mut d_out = Array2::<f64>::zeros(q_cache.output.dim());
        for (r, mut row) in d_out.rows_mut().into_iter().enumerate() {
            let z = q_cache.output.row(r);
            let g = normalize_backward(z.as_slice().expect("standard layout"), out.grad_queries.row(r).as_slice().expect("standard layout"))?;
            row.as_slice_mut().expect("standard layout").copy_from_slice(&g);
        }
        let grad = self.state.encoder.query.backward_batch(&q_cache, Some(&d_out), None)?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let (wd, mu) = (cfg.weight_decay, cfg.sgd_momentum);
        sgd_step(self.state.encoder.query.values_mut(), &grad, &mut self.state.sgd, lr, wd, mu)?;
        self.state.encoder.momentum_update();
        let keys: Vec<(&[f64], u64)> = kn
            .rows()
            .into_iter()
            .zip(&batch.key_tags)
            .map(|(row, tag)| (row.to_slice().expect("standard layout"), tag.image_id))
            .collect();
        self.state.queue.push(&keys)?;
        self.state.step += 1;
        Ok(TraceRecord {
            step: self.state.step,
            epoch,
            term1: out.term1,
            term2: out.term2,
            loss: out.loss,
            queue_fill: self.state.queue.len(),
            grad_norm,
            lr,
        })
    }

    fn dump_abort(&self, err: &Error) {
        if let Some(dir) = &self.out_dir {
            let dump = serde_json::json!({
                "error": err.to_string(),
                "epochs_done": self.state.epochs_done,
                "step": self.state.step,
                "recent_trace": self.trace.iter().rev().take(20).collect::<Vec<_>>(),
            });
            let _ = fs::write(dir.join("abort_state.json"), serde_json::to_vec_pretty(&dump).unwrap_or_default());
        }
    }

    /// Runs one epoch and returns its trace records.
    pub fn run_epoch(&mut self) -> Result<Vec<TraceRecord>> {
        let cfg = self.state.config.clone();
        let epoch = self.state.epochs_done;
        if epoch >= cfg.epochs {
            return Err(Error::invalid(format!("all {} epochs already done", cfg.epochs)));
        }
        let epoch_rng = RngStream::new(cfg.seed).at("epoch", epoch as u64);
        let mut order: Vec<usize> = (0..self.corpus.len()).collect();
        epoch_rng.derive("order").shuffle(&mut order);
        let lr = step_lr(cfg.base_lr(), epoch, &cfg.lr_decay_epochs, cfg.lr_decay_factor);
        let mut records = Vec::with_capacity(self.steps_per_epoch());
        for s in 0..self.steps_per_epoch() {
            let ids = &order[s * cfg.batch_size..(s + 1) * cfg.batch_size];
            match self.step(epoch, &epoch_rng.at("step", s as u64), ids, lr) {
                Ok(rec) => {
                    self.trace.push(rec.clone());
                    records.push(rec);
                }
                Err(e) => {
                    self.dump_abort(&e);
                    return Err(e);
                }
            }
        }
        self.state.epochs_done += 1;
        if let Some(dir) = &self.out_dir {
            let path = dir.join("trace.jsonl");
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            for r in &records {
                serde_json::to_writer(&mut w, r).map_err(|e| Error::Format(e.to_string()))?;
                writeln!(w).map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            let done = self.state.epochs_done;
            if done % cfg.checkpoint_every == 0 || done == cfg.epochs {
                save_checkpoint(&self.state, &dir.join("checkpoints").join(format!("epoch_{done:04}.ckpt")))?;
            }
            if done == cfg.epochs {
                save_checkpoint(&self.state, &dir.join("final.ckpt"))?;
            }
        }
        Ok(records)
    }

    /// Runs until `epochs_done == until` (capped at the configured count).
    pub fn run_until(&mut self, until: usize) -> Result<()> {
        while self.state.epochs_done < until.min(self.state.config.epochs) {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.state.config.epochs)
    }
}

/// Full pretraining run from scratch. With `out_dir`, writes the resolved
/// config, `trace.jsonl`, periodic checkpoints and `final.ckpt`.
pub fn pretrain(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<(TrainState, Vec<TraceRecord>)> {
    if let Some(dir) = out_dir {
        let trace = dir.join("trace.jsonl");
        if trace.exists() {
            File::create(&trace).map_err(|e| Error::io(&trace, e))?;
        }
    }
    let mut p = Pretrainer::new(init_state(cfg)?, load_corpus(cfg)?, out_dir)?;
    p.run()?;
    let trace = p.trace.clone();
    Ok((p.state, trace))
}
