//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle to an immutable node. Operations that see at
//! least one input requiring gradients record a backward closure; calling
//! [`Tensor::backward`] on a scalar walks the recorded graph in reverse
//! topological order and accumulates `d loss / d leaf` into every leaf that
//! requires gradients. Leaf gradients keep accumulating across calls until
//! [`Tensor::zero_grad`] is used.

pub mod gradcheck;
mod gru;
mod nn;
mod ops;

pub use gru::{bigru, gru_direction, GruWeights};
pub use nn::{
    adaptive_avg_pool, avg_pool2d, batch_norm, conv2d, conv2d_output_shape, dropout, elu,
    layer_norm, pooled_len, sigmoid, softmax_cross_entropy, tanh_act, BatchNormConfig, Mode,
    RunningStats,
};
pub use ops::{add, concat, linear, matmul, mul, sub};

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gradient contributions for each input of an operation, in input order.
pub(crate) type InputGrads<T> = Vec<Option<Vec<T>>>;
type BackwardFn<T> = Box<dyn Fn(&[T]) -> InputGrads<T> + Send + Sync>;

struct GradFn<T: Scalar> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    grad_fn: Option<GradFn<T>>,
}

pub struct Tensor<T: Scalar> {
    node: Arc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { node: Arc::clone(&self.node) }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.node.shape);
        if let Some(g) = &self.node.grad_fn {
            s.field("op", &g.op);
        }
        if self.node.data.len() <= 16 {
            s.field("data", &self.node.data);
        }
        s.finish()
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on this thread while alive.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor { node: Arc::new(node) }
    }

    /// Constant leaf; never receives a gradient.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Trainable leaf.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn leaf(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::from_node(Node {
            shape: shape.to_vec(),
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn: None,
        }))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(vec![T::zero(); numel(shape)], shape).expect("valid shape")
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_vec(vec![value; numel(shape)], shape).expect("valid shape")
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(vec![value], &[1]).expect("valid shape")
    }

    /// Result of an operation. The backward closure is kept only when graph
    /// recording is enabled and some input requires gradients.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: &[&Tensor<T>],
        backward: impl Fn(&[T]) -> InputGrads<T> + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{op}");
        let record = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let grad_fn = record.then(|| GradFn {
            op,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            backward: Box::new(backward),
        });
        Self::from_node(Node {
            shape,
            data,
            requires_grad: record,
            grad: Mutex::new(None),
            grad_fn,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.node.data[0]
    }

    /// Same values in a fresh leaf with no history.
    pub fn detach(&self) -> Self {
        Self::from_node(Node {
            shape: self.node.shape.clone(),
            data: self.node.data.clone(),
            requires_grad: false,
            grad: Mutex::new(None),
            grad_fn: None,
        })
    }

    /// Deep copy of a leaf, keeping its `requires_grad` flag but not its gradient.
    pub fn deep_clone(&self) -> Self {
        Self::from_node(Node {
            shape: self.node.shape.clone(),
            data: self.node.data.clone(),
            requires_grad: self.node.requires_grad,
            grad: Mutex::new(None),
            grad_fn: None,
        })
    }

    pub fn same_node(&self, other: &Tensor<T>) -> bool {
        Arc::ptr_eq(&self.node, &other.node)
    }

    /// Mutates the values of a leaf. When other handles share the node, the
    /// leaf is replaced by a private copy first (gradient carried over).
    pub fn update_data(&mut self, f: impl FnOnce(&mut [T])) {
        assert!(self.is_leaf(), "update_data on a non-leaf tensor");
        if let Some(node) = Arc::get_mut(&mut self.node) {
            f(&mut node.data);
            return;
        }
        let mut data = self.node.data.clone();
        f(&mut data);
        let grad = self.grad();
        *self = Self::from_node(Node {
            shape: self.node.shape.clone(),
            data,
            requires_grad: self.node.requires_grad,
            grad: Mutex::new(grad),
            grad_fn: None,
        });
    }

    /// Mutable view of a leaf's values, copying the node first if shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        if Arc::get_mut(&mut self.node).is_none() {
            self.update_data(|_| {});
        }
        &mut Arc::get_mut(&mut self.node).expect("unique after copy").data
    }

    /// Reverse-mode sweep from a one-element tensor.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Usage("backward on a tensor that does not require grad".into()));
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node<T>, Vec<T>> = HashMap::new();
        pending.insert(Arc::as_ptr(&self.node), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&Arc::as_ptr(&t.node)) else {
                continue;
            };
            match &t.node.grad_fn {
                None => {
                    let mut slot = t.node.grad.lock().expect("grad lock");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                        None => *slot = Some(g),
                    }
                }
                Some(gf) => {
                    let grads = (gf.backward)(&g);
                    debug_assert_eq!(grads.len(), gf.inputs.len(), "{}", gf.op);
                    for (input, grad) in gf.inputs.iter().zip(grads) {
                        let Some(grad) = grad else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(grad.len(), input.numel(), "{}", gf.op);
                        match pending.entry(Arc::as_ptr(&input.node)) {
                            std::collections::hash_map::Entry::Occupied(mut e) => e
                                .get_mut()
                                .iter_mut()
                                .zip(&grad)
                                .for_each(|(a, &b)| *a = *a + b),
                            std::collections::hash_map::Entry::Vacant(e) => {
                                e.insert(grad);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` through gradient-carrying edges, inputs
    /// before consumers.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashMap<*const Node<T>, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(Arc::as_ptr(&self.node), ());
        while let Some((t, next)) = stack.pop() {
            let inputs = t.node.grad_fn.as_ref().map(|g| g.inputs.as_slice()).unwrap_or(&[]);
            if next < inputs.len() {
                let child = inputs[next].clone();
                stack.push((t, next + 1));
                if child.requires_grad()
                    && visited.insert(Arc::as_ptr(&child.node), ()).is_none()
                {
                    stack.push((child, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_is_rejected() {
        assert!(Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![], &[0]).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::<f64>::parameter(vec![1.0, -2.0, 3.0], &[3]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_sum_is_twice_input() {
        let x = Tensor::<f64>::parameter(vec![1.0, -2.0, 0.5], &[3]).unwrap();
        mul(&x, &x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::parameter(vec![1.0, 2.0], &[2]).unwrap();
        x.sum().backward().unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn shared_subgraph_visited_once() {
        // y = x * 3 used twice: d/dx (y + y) = 6
        let x = Tensor::<f64>::parameter(vec![2.0], &[1]).unwrap();
        let y = x.scale(3.0);
        let loss = add(&y, &y).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn non_scalar_backward_is_usage_error() {
        let x = Tensor::<f64>::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::Usage(_))));
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::<f32>::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let y = {
            let _g = no_grad();
            x.scale(2.0)
        };
        assert!(!y.requires_grad());
        assert!(x.scale(2.0).requires_grad());
    }

    #[test]
    fn update_data_copies_when_shared() {
        let mut x = Tensor::<f32>::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let alias = x.clone();
        x.update_data(|d| d[0] = 5.0);
        assert_eq!(x.data(), &[5.0, 2.0]);
        assert_eq!(alias.data(), &[1.0, 2.0]);
    }
}
