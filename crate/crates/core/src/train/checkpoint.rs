use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::optim::SgdState;
use crate::error::{Error, Result};
use crate::loss::{MomentumQueue, QueueMeta};
use crate::model::{EncoderParams, EncoderState, LayerSlot};

const MAGIC: &[u8; 8] = b"QAWCKPT\0";
const VERSION: u32 = 1;

/// Everything needed to continue pretraining bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub epochs_done: usize,
    pub step: u64,
    pub encoder: EncoderState,
    pub sgd: SgdState,
    pub queue: MomentumQueue,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epochs_done: usize,
    step: u64,
    momentum: f64,
    layout: Vec<LayerSlot>,
    param_len: usize,
    queue: QueueMeta,
}

fn push_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// Layout: magic, version (u32 LE), header length (u64 LE), JSON header,
/// then little-endian f64 arrays for the query parameters, key parameters,
/// SGD velocity and queue keys, then a SHA-256 of everything before it.
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let header = Header {
        config: state.config.clone(),
        epochs_done: state.epochs_done,
        step: state.step,
        momentum: state.encoder.momentum,
        layout: state.encoder.query.config().layout(),
        param_len: state.encoder.query.len(),
        queue: state.queue.meta(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    push_f64s(&mut buf, state.encoder.query.values());
    push_f64s(&mut buf, state.encoder.key().values());
    push_f64s(&mut buf, &state.sgd.velocity);
    push_f64s(&mut buf, state.queue.raw_keys());
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < MAGIC.len() + 12 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let hlen = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let enc = header.config.encoder.clone();
    if enc.layout() != header.layout || enc.param_count() != header.param_len {
        return Err(Error::Format("checkpoint layer map does not match its config".into()));
    }
    let query = EncoderParams::from_values(enc.clone(), r.f64s(header.param_len)?)?;
    let key = EncoderParams::from_values(enc, r.f64s(header.param_len)?)?;
    let velocity = r.f64s(header.param_len)?;
    if velocity.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("checkpoint optimizer state".into()));
    }
    let qlen = header.queue.capacity.checked_mul(header.queue.dim).ok_or_else(|| Error::Format("queue too large".into()))?;
    let queue = MomentumQueue::from_parts(header.queue, r.f64s(qlen)?)?;
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(TrainState {
        config: header.config,
        epochs_done: header.epochs_done,
        step: header.step,
        encoder: EncoderState::from_parts(query, key, header.momentum)?,
        sgd: SgdState { velocity },
        queue,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
