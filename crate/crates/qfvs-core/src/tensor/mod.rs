//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Computation is recorded on a [`Tape`]: every op pushes a new tensor node
//! holding its forward value plus enough bookkeeping to run the backward
//! pass. Tensors are referenced by [`TensorId`] (an index into the tape), so
//! the graph is append-only and freeing is wholesale via dropping the tape.
//!
//! Gradients follow the usual conventions: [`Tape::backward`] accepts a
//! scalar loss, walks nodes in reverse creation order, and accumulates
//! gradients additively into every reachable leaf created with
//! [`Tape::param`]. Repeated backward calls keep accumulating until
//! [`Tape::zero_grad`] is called. Intermediate (non-leaf) gradients are
//! transient scratch and are not retained.

mod backward;
pub mod checkpoint;
mod ops;
pub mod rng;

pub use ops::BnStats;

use crate::error::{Error, Result};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Whether stochastic / statistics-tracking layers run in training or
/// inference behaviour. Affects dropout and batch norm only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel statistics cached by batch norm for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnSaved {
    pub mean: Vec<f64>,
    pub invstd: Vec<f64>,
    pub train: bool,
}

/// Recorded operation for one tape node, including parent links and any
/// forward-pass state the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    /// Swap of the last two axes.
    Transpose { x: TensorId },
    Conv1d { x: TensorId, w: TensorId, b: TensorId, stride: usize, pad: usize },
    ConvTranspose1d { x: TensorId, w: TensorId, stride: usize },
    MaxPool1d { x: TensorId, argmax: Vec<usize> },
    BatchNorm { x: TensorId, gamma: TensorId, beta: TensorId, saved: BnSaved },
    Relu { x: TensorId },
    Sigmoid { x: TensorId },
    Log { x: TensorId },
    Clamp { x: TensorId, lo: f64, hi: f64 },
    /// Elementwise `x * scale + shift` with compile-time constants.
    Affine { x: TensorId, scale: f64 },
    Softmax { x: TensorId, axis: usize },
    Add { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Concat { parts: Vec<TensorId>, axis: usize },
    Sum { x: TensorId, axis: Option<usize> },
    Mean { x: TensorId, axis: Option<usize> },
    /// Mask holds 0.0 for dropped slots and 1/(1-p) for kept ones.
    Dropout { x: TensorId, mask: Vec<f64> },
    /// Tile a size-1 axis `count` times.
    Repeat { x: TensorId, axis: usize },
    Reshape { x: TensorId },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Persistent gradient storage; populated for leaves only.
    pub grad: Option<Vec<f64>>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Append-only computation graph plus its tensor storage.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Named trainable leaves in first-interned order.
    params: Vec<(String, TensorId)>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of f64 values held by all nodes, useful for memory budgeting
    /// in tests.
    pub fn stored_values(&self) -> usize {
        self.nodes.iter().map(|n| n.data.len()).sum()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = match &op {
            Op::Leaf => false,
            other => self.any_parent_requires_grad(other),
        };
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            op,
            requires_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn any_parent_requires_grad(&self, op: &Op) -> bool {
        let mut out = false;
        op.for_each_parent(&mut |id| out |= self.nodes[id.0].requires_grad);
        out
    }

    /// Creates a constant leaf. Constants never receive gradients and
    /// gradient flow stops at them.
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<TensorId> {
        if numel(shape) != data.len() {
            return Err(Error::Contract(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf))
    }

    /// Creates a scalar constant with shape `[1]`.
    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![1], vec![v], Op::Leaf)
    }

    /// Interns a named trainable leaf.
    ///
    /// Re-interning the same name returns the existing node, so a parameter
    /// used by several forward passes on one tape accumulates gradients in a
    /// single place. A shape conflict under one name is a contract error.
    pub fn param(&mut self, name: &str, data: &[f64], shape: &[usize]) -> Result<TensorId> {
        if let Some((_, id)) = self.params.iter().find(|(n, _)| n == name) {
            let existing = &self.nodes[id.0];
            if existing.shape != shape {
                return Err(Error::Contract(format!(
                    "parameter '{name}' re-interned with shape {:?}, previously {:?}",
                    shape, existing.shape
                )));
            }
            return Ok(*id);
        }
        if numel(shape) != data.len() {
            return Err(Error::Contract(format!(
                "parameter '{name}' data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        let id = self.push(shape.to_vec(), data.to_vec(), Op::Leaf);
        self.nodes[id.0].requires_grad = true;
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Persistent gradient of a leaf, if backward has reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Named parameters in first-interned order with their gradients.
    pub fn param_grads(&self) -> Vec<(String, Option<&[f64]>)> {
        self.params
            .iter()
            .map(|(name, id)| (name.clone(), self.nodes[id.0].grad.as_deref()))
            .collect()
    }

    /// Clears persistent gradients on all leaves.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Runs reverse-mode differentiation from a scalar loss.
    ///
    /// Gradients are added into the persistent `grad` buffers of trainable
    /// leaves, so calling backward twice doubles them.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if numel(&self.nodes[loss.0].shape) != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut scratch: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        scratch[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = scratch[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let slot = self.nodes[idx]
                    .grad
                    .get_or_insert_with(|| vec![0.0; dy.len()]);
                for (g, d) in slot.iter_mut().zip(&dy) {
                    *g += d;
                }
                continue;
            }
            self.backward_step(idx, &dy, &mut scratch);
        }
        Ok(())
    }

    /// Adds `contrib` into the scratch gradient of `id`, skipping subgraphs
    /// that cannot receive gradients.
    pub(crate) fn acc(
        &self,
        scratch: &mut [Option<Vec<f64>>],
        id: TensorId,
        contrib: &[f64],
    ) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = scratch[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].data.len()]);
        for (g, c) in slot.iter_mut().zip(contrib) {
            *g += c;
        }
    }
}

impl Op {
    fn for_each_parent(&self, f: &mut dyn FnMut(TensorId)) {
        match self {
            Op::Leaf => {}
            Op::Matmul { a, b, .. } | Op::Add { a, b } | Op::Mul { a, b } => {
                f(*a);
                f(*b);
            }
            Op::Conv1d { x, w, b, .. } => {
                f(*x);
                f(*w);
                f(*b);
            }
            Op::ConvTranspose1d { x, w, .. } => {
                f(*x);
                f(*w);
            }
            Op::BatchNorm { x, gamma, beta, .. } => {
                f(*x);
                f(*gamma);
                f(*beta);
            }
            Op::Concat { parts, .. } => {
                for p in parts {
                    f(*p);
                }
            }
            Op::Transpose { x }
            | Op::MaxPool1d { x, .. }
            | Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::Log { x }
            | Op::Clamp { x, .. }
            | Op::Affine { x, .. }
            | Op::Softmax { x, .. }
            | Op::Sum { x, .. }
            | Op::Mean { x, .. }
            | Op::Dropout { x, .. }
            | Op::Repeat { x, .. }
            | Op::Reshape { x } => f(*x),
        }
    }
}
