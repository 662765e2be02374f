//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a shared handle to a row-major value buffer plus an
//! optional gradient buffer and an optional back-pointer to the operation
//! that produced it. Running an op builds the computation graph implicitly;
//! [`Tensor::backward`] traverses it in reverse topological order and
//! accumulates gradients into every `requires_grad` leaf.
//!
//! Handles are cheap to clone and may be moved between threads. A single
//! graph must be built and traversed by one thread at a time; weight tensors
//! may be shared across threads for concurrent forward passes on independent
//! graphs.

pub mod gradcheck;
pub mod ops;

use std::ops::Deref;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

type BackwardFn<T> = Box<dyn Fn(&[T]) + Send + Sync>;

/// Producing operation of a non-leaf tensor: the parent handles plus a
/// closure that takes the output gradient and accumulates into the parents.
pub(crate) struct Node<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

/// Mutable part of a tensor: the value buffer and its gradient.
struct Cell<T> {
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

/// Shared handle to an n-dimensional row-major value, optionally tracked by
/// the autodiff graph.
pub struct Tensor<T: Scalar> {
    id: u64,
    shape: Arc<Vec<usize>>,
    requires_grad: bool,
    node: Option<Arc<Node<T>>>,
    cell: Arc<RwLock<Cell<T>>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            id: self.id,
            shape: Arc::clone(&self.shape),
            requires_grad: self.requires_grad,
            node: self.node.clone(),
            cell: Arc::clone(&self.cell),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.id, self.shape, self.requires_grad
        )
    }
}

/// Read guard over a tensor's data buffer.
pub struct DataRef<'a, T: Scalar> {
    guard: RwLockReadGuard<'a, Cell<T>>,
}

impl<T: Scalar> Deref for DataRef<'_, T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.guard.data
    }
}

pub(crate) fn check_shape_len(shape: &[usize], len: usize) -> Result<()> {
    let numel: usize = shape.iter().product();
    if shape.iter().any(|&d| d == 0) || numel != len {
        return Err(Error::InvalidArg {
            op: "tensor",
            msg: format!("shape {:?} does not describe {} elements", shape, len),
        });
    }
    Ok(())
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Scalar> Tensor<T> {
    fn new_leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: Arc::new(shape),
            requires_grad,
            node: None,
            cell: Arc::new(RwLock::new(Cell { data, grad: None })),
        }
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape_len(shape, data.len())?;
        Ok(Self::new_leaf(shape.to_vec(), data, false))
    }

    /// Learnable leaf: `requires_grad = true`.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape_len(shape, data.len())?;
        Ok(Self::new_leaf(shape.to_vec(), data, true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new_leaf(shape.to_vec(), vec![T::zero(); n], false)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::new_leaf(shape.to_vec(), vec![value; n], false)
    }

    pub fn scalar(value: T) -> Self {
        Self::new_leaf(vec![1], vec![value], false)
    }

    /// Output of an operation. `requires_grad` is inherited from the parents;
    /// when no parent is tracked the node is pruned and the result is a
    /// constant.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad);
        let node = if requires_grad {
            Some(Arc::new(Node {
                parents,
                backward: Box::new(backward),
            }))
        } else {
            None
        };
        Tensor {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: Arc::new(shape),
            requires_grad,
            node,
            cell: Arc::new(RwLock::new(Cell { data, grad: None })),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Identity of the underlying storage; clones of a handle share it.
    pub fn tensor_id(&self) -> u64 {
        self.id
    }

    pub fn is_leaf(&self) -> bool {
        self.node.is_none()
    }

    /// Borrow the data buffer.
    pub fn data(&self) -> DataRef<'_, T> {
        DataRef {
            guard: self.cell.read().unwrap(),
        }
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.cell.read().unwrap().data.clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        let cell = self.cell.read().unwrap();
        debug_assert_eq!(cell.data.len(), 1, "item() on non-scalar tensor");
        cell.data[0]
    }

    pub fn get(&self, i: usize) -> T {
        self.cell.read().unwrap().data[i]
    }

    /// Replace the data buffer (same length). Invalidates gradients of any
    /// graph already built on the old values.
    pub fn set_data(&self, data: Vec<T>) {
        let mut cell = self.cell.write().unwrap();
        assert_eq!(cell.data.len(), data.len(), "set_data length mismatch");
        cell.data = data;
    }

    /// In-place mutation of the data buffer (optimizer updates, perturbations).
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        let mut cell = self.cell.write().unwrap();
        f(&mut cell.data);
    }

    /// Add `delta` to element `i` (finite-difference probes).
    pub fn nudge(&self, i: usize, delta: T) {
        let mut cell = self.cell.write().unwrap();
        cell.data[i] = cell.data[i] + delta;
    }

    /// Copy of the gradient buffer, if one has been accumulated.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.cell.read().unwrap().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.cell.write().unwrap().grad = None;
    }

    /// Accumulate `delta` into this tensor's gradient. No-op unless the
    /// tensor requires grad.
    pub(crate) fn add_to_grad(&self, delta: &[T]) {
        if !self.requires_grad {
            return;
        }
        let mut cell = self.cell.write().unwrap();
        debug_assert_eq!(cell.data.len(), delta.len());
        match &mut cell.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => cell.grad = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode backpropagation from a scalar loss. Gradients of leaves
    /// accumulate additively across repeated calls; intermediate gradients
    /// are recomputed per call.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::InvalidArg {
                op: "backward",
                msg: format!("loss must be a scalar, got shape {:?}", self.shape),
            });
        }
        let graph = Graph::trace(self);
        graph.run_backward(self);
        Ok(())
    }
}

/// Topologically ordered record of the operations reachable from one root,
/// leaves first. Traversal during backward visits each node exactly once.
pub struct Graph<T: Scalar> {
    order: Vec<Tensor<T>>,
}

impl<T: Scalar> Graph<T> {
    /// Iterative post-order DFS over parent edges. The returned order lists
    /// every reachable tensor with parents before consumers.
    pub fn trace(root: &Tensor<T>) -> Self {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // Stack of (tensor, parents_pushed).
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id) {
                continue;
            }
            let parents: Vec<Tensor<T>> = match &t.node {
                Some(node) => node.parents.clone(),
                None => Vec::new(),
            };
            stack.push((t, true));
            for p in parents {
                if !visited.contains(&p.id) {
                    stack.push((p, false));
                }
            }
        }
        Graph { order }
    }

    pub fn node_count(&self) -> usize {
        self.order.len()
    }

    /// Ids in topological order (parents before consumers); used by tests.
    pub fn order_ids(&self) -> Vec<u64> {
        self.order.iter().map(|t| t.id).collect()
    }

    fn run_backward(&self, root: &Tensor<T>) {
        // Intermediate grads are per-call scratch; leaf grads persist.
        for t in &self.order {
            if t.node.is_some() {
                t.cell.write().unwrap().grad = None;
            }
        }
        {
            let mut cell = root.cell.write().unwrap();
            match &mut cell.grad {
                Some(g) => g[0] = g[0] + T::one(),
                None => cell.grad = Some(vec![T::one()]),
            }
        }
        for t in self.order.iter().rev() {
            let Some(node) = &t.node else { continue };
            let grad = t.cell.read().unwrap().grad.clone();
            if let Some(grad) = grad {
                (node.backward)(&grad);
            }
        }
    }
}
