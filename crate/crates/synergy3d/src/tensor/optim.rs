//! SGD with classical momentum.

use super::ParamStore;
use crate::error::{Error, Result};
use std::sync::Arc;

/// `v <- momentum * v + g; p <- p - lr * v`, deterministic given state.
#[derive(Debug, Clone, Copy)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {lr} must be >= 0")));
        }
        if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
            return Err(Error::InvalidConfig(format!("momentum {momentum} must be in [0,1)")));
        }
        Ok(Self { lr, momentum })
    }

    /// Applies one update to every trainable entry that holds a gradient.
    /// A non-finite gradient aborts with the offending parameter named.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        for entry in store.entries_mut() {
            if !entry.trainable {
                continue;
            }
            let Some(grad) = &entry.grad else {
                continue;
            };
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of '{}'", entry.name)));
            }
            let value = Arc::make_mut(&mut entry.value);
            for ((p, v), &g) in value.iter_mut().zip(entry.velocity.iter_mut()).zip(grad) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
        Ok(())
    }
}
