//! Dense tensor engine with reverse-mode differentiation.
//!
//! The engine is deliberately minimal: it supports exactly the operator set
//! the two networks need (convolution, pooling, bilinear upsampling, channel
//! concatenation, activations, and the two classification losses), plus Adam.
//!
//! Tensors are reference-counted graph nodes. Building a graph is cheap and
//! local to one thread; network *parameters* are kept as plain buffers (see
//! `nets`) and wrapped in leaf tensors per forward pass, so inference across
//! threads never shares graph state. Gradient checks run in `f64`; training
//! runs in `f32`.

pub mod adam;
pub mod ops;
pub mod weights;

use std::cell::RefCell;
use std::collections::HashSet;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::rc::Rc;

use crate::error::{Error, Result};

/// Scalar types the engine computes in.
pub trait Element:
    Copy
    + Send
    + Sync
    + Default
    + PartialOrd
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
}

macro_rules! impl_element {
    ($t:ty) => {
        impl Element for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            fn to_f32(self) -> f32 {
                self as f32
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn ln_1p(self) -> Self {
                self.ln_1p()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
        }
    };
}

impl_element!(f32);
impl_element!(f64);

type BackwardFn<T> = Box<dyn Fn(&[T], &[Tensor<T>])>;

struct Node<T: Element> {
    dims: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Dense N-dimensional array, optionally tracked by the autograd graph.
///
/// Cloning is cheap (shared node). `backward` may only be called on scalars.
pub struct Tensor<T: Element = f64> {
    inner: Rc<RefCell<Node<T>>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(dims: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                axis: "numel",
                detail: format!(
                    "dims {:?} imply {} elements, data has {}",
                    dims,
                    numel,
                    data.len()
                ),
            });
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Dimension {
                axis: "dims",
                detail: format!("zero-sized axis in {dims:?}"),
            });
        }
        Ok(Self::new_node(dims, data, requires_grad, Vec::new(), None))
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let numel: usize = dims.iter().product();
        Self::new_node(dims.to_vec(), vec![T::ZERO; numel], false, Vec::new(), None)
    }

    pub fn scalar(v: T) -> Self {
        Self::new_node(vec![1], vec![v], false, Vec::new(), None)
    }

    fn new_node(
        dims: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                dims,
                data,
                grad: None,
                requires_grad,
                parents,
                backward,
            })),
        }
    }

    /// Result of an op: tracks gradients iff any parent does.
    pub(crate) fn from_op(
        dims: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::new_node(dims, data, true, parents, Some(backward))
        } else {
            // Dead branch for inference: keep no graph edges.
            Self::new_node(dims, data, false, Vec::new(), None)
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.inner.borrow().dims.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Copy of the value buffer.
    pub fn to_vec(&self) -> Vec<T> {
        self.inner.borrow().data.clone()
    }

    /// Copy of the gradient buffer, if populated by a backward pass.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.borrow().grad.clone()
    }

    /// Run a closure over the value buffer without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let n = self.inner.borrow();
        debug_assert_eq!(n.data.len(), 1, "item() on non-scalar");
        n.data[0]
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Reverse-mode differentiation from a scalar output.
    ///
    /// Every tensor on a path from a `requires_grad` leaf to `self` receives
    /// an accumulated gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::State(format!(
                "backward requires a scalar loss, got dims {:?}",
                self.dims()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::State(
                "backward on a tensor with no gradient-tracked ancestors".into(),
            ));
        }

        // Topological order by iterative DFS over parent edges.
        let mut topo: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.ptr_id());
        while let Some((node, child_idx)) = stack.pop() {
            let next = {
                let n = node.inner.borrow();
                n.parents.get(child_idx).cloned()
            };
            match next {
                Some(parent) => {
                    stack.push((node, child_idx + 1));
                    if parent.requires_grad() && visited.insert(parent.ptr_id()) {
                        stack.push((parent, 0));
                    }
                }
                None => topo.push(node),
            }
        }

        self.inner.borrow_mut().grad = Some(vec![T::ONE]);

        for node in topo.iter().rev() {
            let (grad, parents) = {
                let n = node.inner.borrow();
                if n.backward.is_none() {
                    continue;
                }
                match &n.grad {
                    Some(g) => (g.clone(), n.parents.clone()),
                    None => continue,
                }
            };
            let n = node.inner.borrow();
            if let Some(back) = &n.backward {
                back(&grad, &parents);
            }
        }
        Ok(())
    }
}

/// Accumulate `g` into the gradient buffer of `t` (no-op when untracked).
pub(crate) fn accumulate_grad<T: Element>(t: &Tensor<T>, g: &[T]) {
    let mut n = t.inner.borrow_mut();
    if !n.requires_grad {
        return;
    }
    let len = n.data.len();
    debug_assert_eq!(len, g.len());
    let grad = n.grad.get_or_insert_with(|| vec![T::ZERO; len]);
    for (a, b) in grad.iter_mut().zip(g) {
        *a += *b;
    }
}

#[cfg(test)]
mod tests {
    use super::ops;
    use super::*;

    #[test]
    fn from_vec_validates_dims() {
        let err = Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 5], false).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn backward_requires_scalar() {
        let t = Tensor::<f64>::from_vec(vec![2], vec![1.0, 2.0], true).unwrap();
        assert!(t.backward().is_err());
    }

    #[test]
    fn shared_subgraph_accumulates() {
        // y = relu(x) + relu(x); dy/dx = 2 for x > 0.
        let x = Tensor::<f64>::from_vec(vec![3], vec![1.0, 2.0, 3.0], true).unwrap();
        let a = ops::relu(&x);
        let b = ops::relu(&x);
        let s = ops::add(&a, &b).unwrap();
        let loss = ops::sum(&s);
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn inference_graph_keeps_no_edges() {
        let x = Tensor::<f64>::from_vec(vec![3], vec![1.0, -1.0, 2.0], false).unwrap();
        let y = ops::relu(&x);
        assert!(!y.requires_grad());
        assert!(y.inner.borrow().parents.is_empty());
    }
}
