//! Minimal reverse-mode differentiable array engine.
//!
//! A [`Tape`] records one dynamically-built computation graph per forward
//! pass. [`Var`]s are handles into that graph: immutable f64 buffers plus a
//! node id. Calling [`Tape::backward`] on a scalar walks the nodes in
//! reverse creation order and accumulates exact gradients.
//!
//! A tape is single-writer and not thread-safe; concurrent training shards
//! each build their own tape and reduce gradients outside the engine.

mod checkpoint;
mod ops;
mod optim;
mod params;

pub use checkpoint::{
    checkpoint_to_vec, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
};
pub use ops::{affine, batch_norm_eval, batch_norm_train, concat_cols, BatchStats};
pub use optim::SgdMomentum;
pub use params::{Binding, Param, ParamId, ParamStore};

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    parents: Vec<usize>,
    /// Maps the gradient at this node to one contribution per parent.
    /// `None` for leaves.
    backward: Option<BackwardFn>,
}

/// Records one computation graph.
#[derive(Clone)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    fn push(&self, parents: Vec<usize>, backward: Option<BackwardFn>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents, backward });
        nodes.len() - 1
    }

    /// Creates a leaf (input, parameter, or constant) on this tape.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                detail: format!("data length {} vs shape {:?}", data.len(), shape),
            });
        }
        Ok(Var {
            id: self.push(Vec::new(), None),
            shape: shape.to_vec(),
            data: Arc::new(data),
            tape: self.clone(),
        })
    }

    /// Leaf sharing an existing buffer without copying.
    pub fn leaf_shared(&self, data: Arc<Vec<f64>>, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch {
                op: "leaf_shared",
                detail: format!("data length {} vs shape {:?}", data.len(), shape),
            });
        }
        Ok(Var {
            id: self.push(Vec::new(), None),
            shape: shape.to_vec(),
            data,
            tape: self.clone(),
        })
    }

    pub(crate) fn emit(
        &self,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<usize>,
        backward: BackwardFn,
    ) -> Var {
        Var {
            id: self.push(parents, Some(backward)),
            shape,
            data: Arc::new(data),
            tape: self.clone(),
        }
    }

    pub(crate) fn emit_shared(
        &self,
        data: Arc<Vec<f64>>,
        shape: Vec<usize>,
        parents: Vec<usize>,
        backward: BackwardFn,
    ) -> Var {
        Var {
            id: self.push(parents, Some(backward)),
            shape,
            data,
            tape: self.clone(),
        }
    }

    /// Reverse pass from a scalar loss; returns per-node gradients.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if !self.same_tape(&loss.tape) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: "loss var belongs to a different tape".into(),
            });
        }
        if loss.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!("loss must be scalar, has shape {:?}", loss.shape),
            });
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let contributions = backward(&g);
                debug_assert_eq!(contributions.len(), node.parents.len());
                for (parent, contrib) in node.parents.iter().zip(contributions) {
                    match &mut grads[*parent] {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(&contrib) {
                                *a += c;
                            }
                        }
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Handle to one tensor in a tape: shape, immutable data, node id.
#[derive(Clone)]
pub struct Var {
    id: usize,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    tape: Tape,
}

impl Var {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value of a scalar var.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub(crate) fn id(&self) -> usize {
        self.id
    }

    pub(crate) fn tape(&self) -> &Tape {
        &self.tape
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn check_same_tape(&self, other: &Var, op: &'static str) -> Result<()> {
        if !self.tape.same_tape(&other.tape) {
            return Err(Error::ShapeMismatch {
                op,
                detail: "operands belong to different tapes".into(),
            });
        }
        Ok(())
    }
}

/// Per-node gradients produced by one reverse pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `var`, if any path reached it.
    pub fn wrt(&self, var: &Var) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}
