//! Dense f64 tensors with tape-based reverse-mode autodiff.
//!
//! A [`Tensor`] is an immutable node in a computation graph: it owns its
//! values, an optional gradient buffer, and backpointers to the tensors it
//! was computed from. Ops never mutate their inputs; each op allocates a new
//! node and registers a closure that scatters the output gradient into its
//! parents. [`Tensor::backward`] runs those closures in reverse topological
//! order from a scalar root.
//!
//! All randomness in the crate flows through [`Rng`], a small deterministic
//! generator seeded explicitly by callers.

mod ops;
mod rng;
pub mod gradcheck;

pub use gradcheck::{grad_check, grad_check_subset};
pub use rng::Rng;

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) type BackwardFn = Box<dyn Fn(&Inner)>;

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

impl Inner {
    /// Output gradient, for use inside backward closures. Panics if absent;
    /// `backward` only invokes closures on nodes that received a gradient.
    pub(crate) fn grad_slice(&self) -> std::cell::Ref<'_, Vec<f64>> {
        std::cell::Ref::map(self.grad.borrow(), |g| {
            g.as_ref().expect("backward closure called without gradient")
        })
    }
}

/// Handle to a computation-graph node. Cloning is cheap and shares the node.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expect: usize = shape.iter().product();
    if expect != len {
        return Err(Error::Contract(format!(
            "shape {:?} needs {} values, got {}",
            shape, expect, len
        )));
    }
    Ok(())
}

impl Tensor {
    fn new_leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Leaf that does not track gradients.
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_len(shape, data.len())?;
        Ok(Tensor::new_leaf(shape.to_vec(), data, false))
    }

    /// Leaf that accumulates a gradient during `backward`.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_len(shape, data.len())?;
        Ok(Tensor::new_leaf(shape.to_vec(), data, true))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::new_leaf(shape.to_vec(), vec![0.0; len], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let len = shape.iter().product();
        Tensor::new_leaf(shape.to_vec(), vec![value; len], false)
    }

    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::new_leaf(vec![n, n], data, false)
    }

    /// Standard-normal constant leaf.
    pub fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.normal()).collect();
        Tensor::new_leaf(shape.to_vec(), data, false)
    }

    /// Standard-normal leaf scaled by `scale`, tracked as a parameter.
    pub fn randn_param(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.normal() * scale).collect();
        Tensor::new_leaf(shape.to_vec(), data, true)
    }

    /// Internal op constructor. When no parent tracks gradients the result is
    /// a plain constant, which lets inference paths skip graph bookkeeping.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if !parents.iter().any(|p| p.inner.requires_grad) {
            return Tensor::new_leaf(shape, data, false);
        }
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad: true,
                grad: RefCell::new(None),
                parents,
                backward: Some(backward),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "scalar() on shape {:?}",
                self.inner.shape
            )));
        }
        Ok(self.inner.data[0])
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Same values as a fresh constant leaf, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new_leaf(self.inner.shape.clone(), self.inner.data.clone(), false)
    }

    /// Same values as a fresh parameter leaf.
    pub fn detach_param(&self) -> Tensor {
        Tensor::new_leaf(self.inner.shape.clone(), self.inner.data.clone(), true)
    }

    pub(crate) fn accumulate_grad_with(&self, f: impl FnOnce(&mut [f64])) {
        if !self.inner.requires_grad {
            return;
        }
        let mut g = self.inner.grad.borrow_mut();
        if g.is_none() {
            *g = Some(vec![0.0; self.inner.data.len()]);
        }
        f(g.as_mut().unwrap());
    }

    /// Reverse-mode sweep from a scalar root. Call once per graph; gradients
    /// accumulate into every parameter leaf reachable from this node.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                self.inner.shape
            )));
        }
        if !self.inner.requires_grad {
            // Constant graph: nothing depends on parameters.
            return Ok(());
        }

        // Iterative post-order DFS over parent edges.
        let mut topo: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.inner.id);
        while let Some((node, pi)) = stack.pop() {
            if pi < node.inner.parents.len() {
                let parent = node.inner.parents[pi].clone();
                stack.push((node, pi + 1));
                if parent.inner.requires_grad && visited.insert(parent.inner.id) {
                    stack.push((parent, 0));
                }
            } else {
                topo.push(node);
            }
        }

        *self.inner.grad.borrow_mut() = Some(vec![1.0]);
        for node in topo.iter().rev() {
            let has_grad = node.inner.grad.borrow().is_some();
            if !has_grad {
                continue;
            }
            if let Some(bw) = &node.inner.backward {
                bw(&node.inner);
            }
        }
        Ok(())
    }

    /// Row-major linear offset for an index tuple.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.inner.shape.len() {
            return Err(Error::Contract(format!(
                "index rank {} vs shape {:?}",
                index.len(),
                self.inner.shape
            )));
        }
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.inner.shape).enumerate() {
            if ix >= dim {
                return Err(Error::IndexOutOfRange {
                    what: "tensor index",
                    index: ix,
                    bound: dim,
                });
            }
            let _ = i;
            off = off * dim + ix;
        }
        Ok(off)
    }

    pub fn at(&self, index: &[usize]) -> Result<f64> {
        Ok(self.inner.data[self.offset(index)?])
    }
}
