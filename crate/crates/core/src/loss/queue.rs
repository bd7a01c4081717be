use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Image id carried by keys that do not come from any corpus image (the
/// random keys a queue may be seeded with).
pub const NO_IMAGE: u64 = u64::MAX;

const NORM_TOL: f64 = 1e-6;

/// Queue state without the key storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct QueueMeta {
    pub capacity: usize,
    pub dim: usize,
    pub ids: Vec<u64>,
    pub len: usize,
    pub cursor: usize,
    pub pushed: u64,
}

/// Fixed-capacity FIFO of unit-norm keys, each tagged with the image it was
/// computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumQueue {
    capacity: usize,
    dim: usize,
    keys: Vec<f64>,
    ids: Vec<u64>,
    len: usize,
    /// Slot the next key is written to.
    cursor: usize,
    pushed: u64,
}

impl MomentumQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::invalid("queue capacity and key dimension must be positive"));
        }
        Ok(Self {
            capacity,
            dim,
            keys: vec![0.0; capacity * dim],
            ids: vec![NO_IMAGE; capacity],
            len: 0,
            cursor: 0,
            pushed: 0,
        })
    }

    /// A full queue of random unit keys tagged [`NO_IMAGE`].
    pub fn random(capacity: usize, dim: usize, rng: &RngStream) -> Result<Self> {
        let mut q = Self::new(capacity, dim)?;
        let mut r = rng.clone();
        let mut key = vec![0.0; dim];
        for _ in 0..capacity {
            loop {
                key.iter_mut().for_each(|v| *v = r.normal());
                let n = key.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 1e-12 {
                    key.iter_mut().for_each(|v| *v /= n);
                    break;
                }
            }
            q.push_one(&key, NO_IMAGE);
        }
        q.pushed = 0;
        Ok(q)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity
    }

    /// Number of corpus keys pushed so far.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    fn push_one(&mut self, key: &[f64], id: u64) {
        let slot = self.cursor;
        self.keys[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(key);
        self.ids[slot] = id;
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        self.pushed += 1;
    }

    /// Appends keys in order, evicting the oldest entries beyond capacity.
    /// Nothing is written unless every key is finite, of the right length
    /// and unit-norm.
    pub fn push(&mut self, keys: &[(&[f64], u64)]) -> Result<()> {
        for (i, (k, _)) in keys.iter().enumerate() {
            if k.len() != self.dim {
                return Err(Error::invalid(format!(
                    "key {i} has dimension {}, queue holds {}",
                    k.len(),
                    self.dim
                )));
            }
            let n = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !n.is_finite() || (n - 1.0).abs() > NORM_TOL {
                return Err(Error::invalid(format!("key {i} has norm {n}, expected 1")));
            }
        }
        for (k, id) in keys {
            self.push_one(k, *id);
        }
        Ok(())
    }

    /// Entries oldest first.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], u64)> + '_ {
        let start = if self.is_full() { self.cursor } else { 0 };
        (0..self.len).map(move |i| {
            let slot = (start + i) % self.capacity;
            (&self.keys[slot * self.dim..(slot + 1) * self.dim], self.ids[slot])
        })
    }

    pub(crate) fn meta(&self) -> QueueMeta {
        QueueMeta {
            capacity: self.capacity,
            dim: self.dim,
            ids: self.ids.clone(),
            len: self.len,
            cursor: self.cursor,
            pushed: self.pushed,
        }
    }

    pub(crate) fn raw_keys(&self) -> &[f64] {
        &self.keys
    }

    pub(crate) fn from_parts(meta: QueueMeta, keys: Vec<f64>) -> Result<Self> {
        let q = Self {
            capacity: meta.capacity,
            dim: meta.dim,
            keys,
            ids: meta.ids,
            len: meta.len,
            cursor: meta.cursor,
            pushed: meta.pushed,
        };
        let consistent = q.capacity > 0
            && q.dim > 0
            && q.keys.len() == q.capacity * q.dim
            && q.ids.len() == q.capacity
            && q.len <= q.capacity
            && q.cursor < q.capacity
            && (q.len == q.capacity || q.cursor == q.len);
        if !consistent {
            return Err(Error::Format("inconsistent queue state".into()));
        }
        for (i, (k, _)) in q.iter().enumerate() {
            let n = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !n.is_finite() || (n - 1.0).abs() > NORM_TOL {
                return Err(Error::Format(format!("queue key {i} has norm {n}")));
            }
        }
        Ok(q)
    }

    /// Raw storage: `len` rows in slot order (not age order), with their ids.
    pub(crate) fn slots(&self) -> (&[f64], &[u64]) {
        (&self.keys[..self.len * self.dim], &self.ids[..self.len])
    }
}
