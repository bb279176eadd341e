use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use super::ops::Op;
use super::{Array, TensorError};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
///
/// Handles are plain indices: cheap to copy and only meaningful on the tape
/// that produced them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub(crate) fn index(self) -> usize {
        self.index as usize
    }
}

pub(crate) struct Node {
    pub(crate) value: Arc<Array>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Ordered record of executed operations.
///
/// Every operation is appended after its inputs, so the node order is a
/// topological order and the backward sweep is a single reverse pass.
/// A tape serves one forward/backward round; calling backward a second time
/// is an error.
pub struct Tape {
    id: u32,
    pub(crate) nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
    backward_done: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.nodes.borrow().len())
            .field("backward_done", &self.backward_done.get())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input value. Gradients are kept for it when
    /// `requires_grad` is set.
    pub fn leaf(&self, value: impl Into<Arc<Array>>, requires_grad: bool) -> Var {
        self.push_node(value.into(), requires_grad, Op::Leaf)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&self, value: impl Into<Arc<Array>>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Arc<Array> {
        self.check(v);
        self.nodes.borrow()[v.index()].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.check(v);
        self.nodes.borrow()[v.index()].value.shape().to_vec()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v);
        self.nodes.borrow()[v.index()].requires_grad
    }

    /// Gradient accumulated for `v` by the backward pass, if any reached it.
    pub fn grad(&self, v: Var) -> Option<Array> {
        self.check(v);
        let grads = self.grads.borrow();
        let g = grads.get(v.index())?.as_ref()?;
        let shape = self.shape(v);
        Some(Array::new(&shape, g.clone()).expect("gradient shape"))
    }

    pub(crate) fn check(&self, v: Var) {
        assert_eq!(v.tape, self.id, "variable used on a foreign tape");
    }

    pub(crate) fn push(&self, value: Array, op: Op) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            let mut any = false;
            op.for_each_input(|p| {
                self.check(p);
                any |= nodes[p.index()].requires_grad;
            });
            any
        };
        self.push_node(Arc::new(value), requires_grad, op)
    }

    fn push_node(&self, value: Arc<Array>, requires_grad: bool, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let index = u32::try_from(nodes.len()).expect("tape overflow");
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<(), TensorError> {
        let value = self.value(root);
        if value.len() != 1 {
            return Err(TensorError::NonScalarRoot(value.shape().to_vec()));
        }
        self.backward_seeded(&[(root, Array::full(value.shape(), 1.0))])
    }

    /// Reverse-mode sweep starting from several nodes at once, each seeded
    /// with an explicit upstream gradient of its own shape.
    pub fn backward_seeded(&self, seeds: &[(Var, Array)]) -> Result<(), TensorError> {
        if self.backward_done.replace(true) {
            return Err(TensorError::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let mut start = 0;
        for (v, seed) in seeds {
            self.check(*v);
            let node = &nodes[v.index()];
            if node.value.shape() != seed.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "backward seed",
                    lhs: node.value.shape().to_vec(),
                    rhs: seed.shape().to_vec(),
                });
            }
            if !node.requires_grad {
                continue;
            }
            let slot = grads[v.index()].get_or_insert_with(|| vec![0.0; seed.len()]);
            for (g, s) in slot.iter_mut().zip(seed.data()) {
                *g += s;
            }
            start = start.max(v.index() + 1);
        }
        for i in (0..start).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            node.op.backward(&nodes, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        drop(nodes);
        *self.grads.borrow_mut() = grads;
        Ok(())
    }
}

/// Mutable gradient buffer for `v`, allocated on first use. `None` when the
/// node does not take gradients.
pub(crate) fn grad_slot<'g>(
    nodes: &[Node],
    grads: &'g mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[v.index()];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(grads[v.index()].get_or_insert_with(|| vec![0.0; len]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_backward_gives_one() {
        let tape = Tape::new();
        let x = tape.leaf(Array::scalar(3.0), true);
        tape.backward(x).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 1.0);
    }

    #[test]
    fn second_backward_is_an_error() {
        let tape = Tape::new();
        let x = tape.leaf(Array::scalar(3.0), true);
        tape.backward(x).unwrap();
        assert!(matches!(tape.backward(x), Err(TensorError::BackwardTwice)));
    }

    #[test]
    fn non_scalar_root_is_an_error() {
        let tape = Tape::new();
        let x = tape.leaf(Array::zeros(&[2]), true);
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarRoot(_))
        ));
    }

    #[test]
    #[should_panic(expected = "foreign tape")]
    fn foreign_vars_are_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.leaf(Array::scalar(1.0), true);
        b.value(x);
    }
}
