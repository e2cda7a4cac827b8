//! Define-by-run gradient tape.
//!
//! Every differentiable operation appends one node holding a backward
//! closure. Execution order is topological by construction, so a single
//! reverse sweep visits each node exactly once and accumulates gradients
//! into a [`Gradients`] store.

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

use super::tensor::Tensor;

type BackwardFn = Box<dyn Fn(&mut Gradients)>;

struct Node {
    backward: BackwardFn,
}

/// Spike-aware operation counters used by the profiler. Attention ops bump
/// these during an instrumented forward pass; all other layers are costed
/// analytically.
#[derive(Default)]
pub struct OpCounters {
    /// Additions charged to the spike-driven score computation
    /// (one per nonzero active-query entry per key column).
    pub attn_score_adds: Cell<u64>,
    /// Nonzero entries of the binary query matrix, over all rows.
    pub attn_score_nnz: Cell<u64>,
    /// Additions charged to the lazy-row fill (column mean of V).
    pub attn_lazy_adds: Cell<u64>,
}

impl OpCounters {
    pub fn reset(&self) {
        self.attn_score_adds.set(0);
        self.attn_score_nnz.set(0);
        self.attn_lazy_adds.set(0);
    }
}

/// Records differentiable operations for one forward pass.
pub struct Tape {
    recording: bool,
    nodes: RefCell<Vec<Node>>,
    tracked: RefCell<HashSet<u64>>,
    pub counters: OpCounters,
}

impl Tape {
    /// Tape that records backward rules.
    pub fn new() -> Self {
        Self {
            recording: true,
            nodes: RefCell::new(Vec::new()),
            tracked: RefCell::new(HashSet::new()),
            counters: OpCounters::default(),
        }
    }

    /// Tape that executes forward math only; nothing is recorded.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// True when gradients must flow into `t`: either it is a grad-requiring
    /// leaf or it was produced by a tracked operation on this tape.
    pub fn tracks(&self, t: &Tensor) -> bool {
        self.recording && (t.requires_grad() || self.tracked.borrow().contains(&t.id()))
    }

    /// Register `output` as tracked and push its backward rule. Callers only
    /// record when at least one input is tracked.
    pub fn record(&self, output: &Tensor, backward: impl Fn(&mut Gradients) + 'static) {
        debug_assert!(self.recording);
        self.tracked.borrow_mut().insert(output.id());
        self.nodes.borrow_mut().push(Node {
            backward: Box::new(backward),
        });
    }

    /// Reverse accumulation from a scalar loss. Gradients of grad-requiring
    /// leaves that the loss never touched are reported as zeros by
    /// [`Gradients::wrt_or_zeros`].
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut grads = Gradients::default();
        grads.map.insert(loss.id(), vec![1.0]);
        let nodes = self.nodes.borrow();
        for node in nodes.iter().rev() {
            (node.backward)(&mut grads);
        }
        Ok(grads)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffers keyed by tensor id, produced by [`Tape::backward`].
#[derive(Default)]
pub struct Gradients {
    map: HashMap<u64, Vec<f64>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`, if any path reached it.
    pub fn wrt(&self, t: &Tensor) -> Option<&[f64]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    /// Gradient of the loss with respect to `t`; zeros when unused.
    pub fn wrt_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        match self.map.get(&t.id()) {
            Some(v) => v.clone(),
            None => vec![0.0; t.numel()],
        }
    }

    /// Upstream gradient for the output of the node being processed. The
    /// buffer is removed: in reverse topological order every consumer has
    /// already accumulated into it, and nothing reads it afterwards.
    pub fn take_output(&mut self, output_id: u64) -> Option<Vec<f64>> {
        self.map.remove(&output_id)
    }

    /// Accumulate into the gradient buffer for tensor `id` (created as
    /// zeros on first touch).
    pub fn accumulate(&mut self, id: u64, len: usize, add: impl FnOnce(&mut [f64])) {
        let buf = self.map.entry(id).or_insert_with(|| vec![0.0; len]);
        add(buf);
    }
}
