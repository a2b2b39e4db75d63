//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends one node to its [`Tape`]. Nodes are
//! only ever appended, so node ids are a topological order and `backward`
//! is a single reverse sweep.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::op::Op;
use crate::tensor::Tensor;

pub(crate) struct Node {
    pub(crate) value: Rc<Tensor>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Ordered record of operations for one unit of work (one forward/backward).
///
/// Not `Sync`: a tape and its variables belong to a single thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    spent: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.spent.set(false);
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation (inputs, labels, frozen weights).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push_node(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        })
    }

    fn push_node(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Records `op` producing `value`; gradient tracking is inherited from inputs.
    pub(crate) fn record(&self, name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>> {
        value.ensure_finite(name)?;
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_node(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        }))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns gradients for every leaf that requires grad. A tape can be
    /// differentiated once; call [`Tape::reset`] before recording again.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::ForeignVar);
        }
        if self.spent.get() {
            return Err(TensorError::AlreadyBackpropagated);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(TensorError::DetachedGraph);
        }
        self.spent.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        let mut leaves = vec![None; nodes.len()];

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else {
                continue;
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            if let Op::Leaf = node.op {
                leaves[id] = Some(Tensor::new(node.value.shape(), grad)?);
                continue;
            }
            let mut sink = GradSink {
                nodes: &nodes,
                grads: &mut grads,
            };
            node.op.backward(&node.value, &grad, &mut sink);
        }

        // Leaves the loss never reached still get an explicit zero gradient.
        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && leaves[id].is_none() {
                leaves[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Accumulates gradient contributions into input slots during backward.
pub(crate) struct GradSink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl<'a> GradSink<'a> {
    pub(crate) fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    pub(crate) fn value(&self, id: usize) -> &'a Tensor {
        &self.nodes[id].value
    }

    /// Mutable gradient buffer for `id`, zero-initialised on first use.
    pub(crate) fn slot(&mut self, id: usize) -> &mut [f64] {
        let n = self.nodes[id].value.numel();
        self.grads[id].get_or_insert_with(|| vec![0.0; n])
    }

    pub(crate) fn add(&mut self, id: usize, contribution: &[f64]) {
        if !self.wants(id) {
            return;
        }
        for (g, c) in self.slot(id).iter_mut().zip(contribution) {
            *g += c;
        }
    }
}

/// Leaf gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`, if `var` is a leaf requiring grad.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.id).shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    pub(crate) fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::ForeignVar)
        }
    }
}
