use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use rand::Rng;

use crate::error::{invalid, TensorError, TensorResult};
use crate::ops::Op;
use crate::scalar::{Dtype, Scalar};

/// An n-dimensional array with reverse-mode gradient tracking.
///
/// A `Tensor` is a cheap handle (`Rc`) onto a graph node. Values are
/// immutable after the forward pass creates them, with two sanctioned
/// exceptions: gradient buffers, and in-place parameter updates by the
/// optimizer. Graphs are rebuilt every step and dropped afterwards;
/// leaf tensors (parameters, inputs) survive across graphs and keep
/// accumulating gradients until explicitly zeroed.
pub struct Tensor<T: Scalar> {
    pub(crate) node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RefCell<Vec<T>>,
    pub(crate) grad: RefCell<Option<Vec<T>>>,
    /// Leaf flag: this tensor wants a gradient. Can be toggled to
    /// freeze/unfreeze parameters between pipeline stages.
    pub(crate) trainable: Cell<bool>,
    /// True if a trainable leaf is reachable from this node; ops with
    /// no tracked inputs skip recording entirely.
    pub(crate) track: bool,
    pub(crate) op: Op<T>,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn make(shape: Vec<usize>, data: Vec<T>, trainable: bool, track: bool, op: Op<T>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                trainable: Cell::new(trainable),
                track,
                op,
            }),
        }
    }

    /// Leaf tensor from raw data; not tracked for gradients.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> TensorResult<Self> {
        if numel_of(shape) != data.len() {
            return Err(invalid(
                "from_vec",
                format!("shape {:?} wants {} elements, got {}", shape, numel_of(shape), data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Tensor::make(shape.to_vec(), data, false, false, Op::Leaf))
    }

    /// Trainable leaf (parameter).
    pub fn param(data: Vec<T>, shape: &[usize]) -> TensorResult<Self> {
        let t = Tensor::from_vec(data, shape)?;
        t.node.trainable.set(true);
        // Leaves are track-worthy by construction; `track` on leaves is
        // read through `is_tracked`, which also consults the flag.
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::make(shape.to_vec(), vec![T::ZERO; numel_of(shape)], false, false, Op::Leaf)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor::make(shape.to_vec(), vec![v; numel_of(shape)], false, false, Op::Leaf)
    }

    pub fn scalar(v: T) -> Self {
        Tensor::make(vec![], vec![v], false, false, Op::Leaf)
    }

    /// Gaussian-initialized trainable parameter, `std * N(0, 1)`.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let data = (0..numel_of(shape))
            .map(|_| T::from_f64(T::standard_normal(rng).to_f64() * std))
            .collect();
        let t = Tensor::make(shape.to_vec(), data, false, false, Op::Leaf);
        t.node.trainable.set(true);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.node.shape)
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data.borrow()[0]
    }

    pub fn is_trainable(&self) -> bool {
        self.node.trainable.get()
    }

    /// Freeze or unfreeze a leaf. Frozen leaves receive no gradients
    /// and are skipped by the optimizer.
    pub fn set_trainable(&self, on: bool) {
        debug_assert!(matches!(self.node.op, Op::Leaf), "set_trainable on non-leaf");
        self.node.trainable.set(on);
    }

    pub(crate) fn is_tracked(&self) -> bool {
        self.node.track || self.node.trainable.get()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[T]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi = T::from_f64(gi.to_f64() + ci.to_f64());
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    /// In-place data overwrite. Reserved for the optimizer and
    /// checkpoint loading; only valid on leaves.
    pub fn set_data(&self, new: &[T]) {
        debug_assert!(matches!(self.node.op, Op::Leaf), "set_data on non-leaf");
        assert_eq!(new.len(), self.numel());
        self.node.data.borrow_mut().copy_from_slice(new);
    }

    /// Overwrite one element of a leaf. Exists for finite-difference
    /// probing; everything else should go through [`Tensor::set_data`].
    pub fn poke(&self, idx: usize, v: T) {
        debug_assert!(matches!(self.node.op, Op::Leaf), "poke on non-leaf");
        self.node.data.borrow_mut()[idx] = v;
    }

    /// A new untracked leaf sharing a copy of this tensor's values.
    pub fn detach(&self) -> Self {
        Tensor::make(self.node.shape.clone(), self.to_vec(), false, false, Op::Leaf)
    }

    /// Reverse-mode sweep from a scalar loss. Fills `grad` on every
    /// tracked node; gradients on leaves accumulate across calls.
    pub fn backward(&self) -> TensorResult<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.is_tracked() {
            return Err(TensorError::NoGradientRoot);
        }

        let order = self.topo_order();
        self.accumulate_grad(&[T::ONE]);

        for tensor in order.iter().rev() {
            let grad = match tensor.node.grad.borrow().clone() {
                Some(g) => g,
                None => continue,
            };
            crate::ops::backward_step(tensor, &grad);
        }
        Ok(())
    }

    /// Post-order DFS over tracked ancestors (deterministic: parent
    /// order is fixed per op).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<*const Node<T>> = HashSet::new();
        // (tensor, next-parent index) emulates recursion.
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(Rc::as_ptr(&self.node));

        while let Some((current, pidx)) = stack.pop() {
            let parents = current.node.op.parents();
            if pidx < parents.len() {
                let parent = parents[pidx].clone();
                stack.push((current, pidx + 1));
                let ptr = Rc::as_ptr(&parent.node);
                if parent.is_tracked() && !visited.contains(&ptr) {
                    visited.insert(ptr);
                    stack.push((parent, 0));
                }
            } else {
                order.push(current);
            }
        }
        order
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("dtype", &T::DTYPE.name())
            .field("trainable", &self.node.trainable.get())
            .finish()
    }
}
