//! Dense f64 tensor with tape-based reverse-mode differentiation.
//!
//! Every value is stored row-major. Operations that involve at least one
//! gradient-tracked input record a node holding the parent tensors and a
//! backward closure; `backward` on a scalar loss replays those nodes in
//! reverse topological order. The graph is rebuilt on every forward pass and
//! dropped afterwards, so parameter data can be updated in place between
//! steps.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::rc::Rc;

use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Backward closure: receives the output tensor's inner storage (for its
/// gradient and saved data) and the parent tensors to accumulate into.
pub(crate) type BackwardFn = Box<dyn Fn(&TensorInner, &[Tensor])>;

pub(crate) struct Node {
    pub(crate) parents: Vec<Tensor>,
    pub(crate) backward: BackwardFn,
}

pub(crate) struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

/// Handle to a dense n-dimensional f64 value, cheap to clone.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl Tensor {
    /// Builds a tensor from explicit shape and row-major data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Contract(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self::leaf(shape, data, false))
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self::leaf(shape, vec![0.0; n], false)
    }

    pub fn scalar(v: f64) -> Self {
        Self::leaf(vec![], vec![v], false)
    }

    /// Leaf tensor that participates in gradient accumulation.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Contract(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self::leaf(shape, data, true))
    }

    pub(crate) fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor {
            inner: Rc::new(TensorInner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node: None,
            }),
        }
    }

    /// Result of an operation. Gradient tracking is inherited from the
    /// parents; the node is only recorded when some parent is tracked.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let node = if requires_grad { Some(Node { parents, backward }) } else { None };
        Tensor {
            inner: Rc::new(TensorInner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    /// Node handle on the tape; `None` for leaves.
    pub fn tape_id(&self) -> Option<u64> {
        self.inner.node.as_ref().map(|_| self.inner.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    /// Mutable view of the raw data. Only sound for leaves between forward
    /// passes (optimizer updates, finite-difference probes).
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.inner.data.borrow_mut()
    }

    /// The scalar value; contract error if the tensor is not a scalar.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.inner.shape
            )));
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn ensure_grad(&self) {
        let mut slot = self.inner.grad.borrow_mut();
        if slot.is_none() {
            *slot = Some(vec![0.0; self.numel()]);
        }
    }

    pub(crate) fn inner(&self) -> &TensorInner {
        &self.inner
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
    /// reachable tensor that requires them; repeated calls without zeroing
    /// keep accumulating.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.inner.shape
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = topo_order(self);
        // Interior grads are scratch space for the sweep; only leaves
        // accumulate across repeated backward calls.
        for t in &order {
            if t.inner.node.is_some() {
                t.zero_grad();
            }
        }
        self.accumulate_grad(&[1.0]);
        for t in order.iter().rev() {
            t.ensure_grad();
            if let Some(node) = &t.inner.node {
                (node.backward)(&t.inner, &node.parents);
            }
        }
        Ok(())
    }
}

impl TensorInner {
    pub(crate) fn data(&self) -> Ref<'_, Vec<f64>> {
        self.data.borrow()
    }

    /// Gradient of this node; only called while a backward sweep is running,
    /// after `ensure_grad` has filled the slot.
    pub(crate) fn grad_ref(&self) -> Ref<'_, Vec<f64>> {
        Ref::map(self.grad.borrow(), |g| {
            g.as_ref().expect("backward sweep visits nodes in order")
        })
    }
}

/// Iterative post-order DFS over the recorded graph, following only
/// gradient-tracked parents.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    // (tensor, child cursor)
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.inner.id);
    while let Some((t, cursor)) = stack.pop() {
        let parents: &[Tensor] = t.inner.node.as_ref().map_or(&[], |n| &n.parents);
        if cursor < parents.len() {
            let child = parents[cursor].clone();
            stack.push((t, cursor + 1));
            if child.requires_grad() && visited.insert(child.inner.id) {
                stack.push((child, 0));
            }
        } else {
            order.push(t);
        }
    }
    order
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("data", &self.inner.data.borrow())
            .finish()
    }
}
