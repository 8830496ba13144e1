//! Persistent trainable buffers, decoupled from per-pass tapes.

use crate::autodiff::TensorShape;
use crate::error::{Error, Result};

/// Stable handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone)]
struct Entry {
    name: String,
    shape: TensorShape,
    data: Vec<f64>,
}

/// Owns all trainable state. Tapes snapshot buffers at registration time,
/// so mutations between forward passes are safe.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    /// Adds a named buffer. Names must be unique; they key checkpoints.
    pub fn add(&mut self, name: &str, data: Vec<f64>, shape: TensorShape) -> Result<ParamId> {
        if shape.numel() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "param_add",
                detail: format!("{name}: {} values for shape {shape}", data.len()),
            });
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.entries.len());
        self.entries.push(Entry { name: name.to_string(), shape, data });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &TensorShape {
        &self.entries[id.0].shape
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total scalar count across all buffers.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Flat copy of every buffer, in id order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.data.clone()).collect()
    }

    /// Restores buffers from a [`snapshot`](Self::snapshot).
    pub fn restore(&mut self, snap: &[Vec<f64>]) -> Result<()> {
        if snap.len() != self.entries.len() {
            return Err(Error::InvalidArgument(format!(
                "snapshot has {} buffers, store has {}",
                snap.len(),
                self.entries.len()
            )));
        }
        for (e, s) in self.entries.iter_mut().zip(snap) {
            if e.data.len() != s.len() {
                return Err(Error::InvalidArgument(format!(
                    "snapshot buffer for {:?} has {} values, expected {}",
                    e.name,
                    s.len(),
                    e.data.len()
                )));
            }
            e.data.copy_from_slice(s);
        }
        Ok(())
    }
}
