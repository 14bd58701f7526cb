//! Named parameter storage shared by the networks and the optimizer.
//!
//! A [`ParamStore`] owns every weight, bias, normalization scale/offset, and
//! running-statistics buffer of a model, in registration order. Each entry is
//! registered exactly once; duplicates are rejected. Registration order is
//! the canonical order for SGD updates, gradient reduction, and checkpoints,
//! so everything downstream is deterministic.

use super::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::sync::Arc;

/// Handle to one entry in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// One named tensor: trainable parameter or persistent buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Arc<Vec<f64>>,
    /// Momentum buffer; kept for trainable entries only.
    pub velocity: Vec<f64>,
    /// Gradient from the latest backward pass, if any.
    pub grad: Option<Vec<f64>>,
    pub trainable: bool,
}

#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a unique name.
    pub fn register(
        &mut self,
        name: &str,
        shape: &[usize],
        value: Vec<f64>,
        trainable: bool,
    ) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        if value.len() != numel {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::register",
                detail: format!("'{name}': {} values vs shape {shape:?}", value.len()),
            });
        }
        let velocity = if trainable { vec![0.0; numel] } else { Vec::new() };
        let id = self.entries.len();
        self.by_name.insert(name.to_string(), id);
        self.entries.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value: Arc::new(value),
            velocity,
            grad: None,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Replaces an entry's value (buffers, checkpoint restore).
    pub fn set_value(&mut self, id: ParamId, value: Vec<f64>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if value.len() != entry.value.len() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::set_value",
                detail: format!(
                    "'{}': {} values vs expected {}",
                    entry.name,
                    value.len(),
                    entry.value.len()
                ),
            });
        }
        entry.value = Arc::new(value);
        Ok(())
    }

    /// Entries in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [Param] {
        &mut self.entries
    }

    /// Creates one leaf per entry on `tape`, sharing the value buffers.
    pub fn bind(&self, tape: &Tape) -> Result<Binding> {
        let mut vars = Vec::with_capacity(self.entries.len());
        for p in &self.entries {
            vars.push(tape.leaf_shared(Arc::clone(&p.value), &p.shape)?);
        }
        Ok(Binding { vars })
    }

    /// Copies gradients from a reverse pass into the store (trainable
    /// entries only). Entries a loss does not reach keep `grad = None`.
    pub fn absorb_grads(&mut self, binding: &Binding, grads: &Gradients) {
        for (entry, var) in self.entries.iter_mut().zip(&binding.vars) {
            if entry.trainable {
                entry.grad = grads.wrt(var).map(|g| g.to_vec());
            }
        }
    }

    /// Adds `scale * grads` into the store's gradient accumulators, in
    /// entry order. Used for the ordered reduction across training shards.
    pub fn accumulate_grads(&mut self, grads: &[Option<Vec<f64>>], scale: f64) {
        for (entry, g) in self.entries.iter_mut().zip(grads) {
            if !entry.trainable {
                continue;
            }
            if let Some(g) = g {
                match &mut entry.grad {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(g) {
                            *a += scale * v;
                        }
                    }
                    slot @ None => *slot = Some(g.iter().map(|v| scale * v).collect()),
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for entry in &mut self.entries {
            entry.grad = None;
        }
    }
}

/// Per-forward-pass mapping from store entries to tape leaves.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    /// Gradients per entry, in store order, taken from one reverse pass.
    pub fn grads_in_order(&self, grads: &Gradients) -> Vec<Option<Vec<f64>>> {
        self.vars.iter().map(|v| grads.wrt(v).map(|g| g.to_vec())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_registration_rejected() {
        let mut store = ParamStore::new();
        store.register("w", &[2, 2], vec![0.0; 4], true).unwrap();
        assert!(matches!(
            store.register("w", &[2], vec![0.0; 2], true),
            Err(Error::DuplicateParam(_))
        ));
    }

    #[test]
    fn bind_shares_buffers_and_collects_grads() {
        let mut store = ParamStore::new();
        let w = store.register("w", &[2, 2], vec![1.0, 2.0, 3.0, 4.0], true).unwrap();
        let tape = Tape::new();
        let binding = store.bind(&tape).unwrap();
        let wv = binding.var(w);
        let loss = wv.mul(wv).unwrap().mean_all();
        let grads = tape.backward(&loss).unwrap();
        store.absorb_grads(&binding, &grads);
        let g = store.get(w).grad.as_ref().unwrap();
        assert_eq!(g, &vec![0.5, 1.0, 1.5, 2.0]); // 2x/4
    }
}
