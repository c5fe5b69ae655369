//! Dense NCHW tensors with reverse-mode autodiff.
//!
//! Every tensor is 4-axis. Ops record a node holding its parents and a
//! backward rule; `backward` replays the recorded graph in reverse
//! topological order and accumulates gradients into leaf tensors that
//! were created with `Tensor::param`. The graph lives only as long as the
//! tensors that reference it, so each forward pass builds a fresh tape
//! and dropping the loss discards it.

mod kernels;
mod ops;
pub use ops::{batchnorm2d, Axes};

pub mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport};

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

// ── Scalar type ──────────────────────────────────────────────────────────

/// Storage scalar. f32 is the training type; f64 exists for gradient
/// verification and metric reductions. Same kernels either way.
pub trait Element:
    rustfft::FftNum + num_traits::Float + fmt::Display + std::iter::Sum + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Error function, evaluated in f64 (no erf in std).
    fn erf(self) -> Self {
        Self::of(libm::erf(self.as_f64()))
    }
}

impl Element for f32 {
    const NAME: &'static str = "f32";
    fn of(v: f64) -> f32 {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";
    fn of(v: f64) -> f64 {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

// ── Shape ────────────────────────────────────────────────────────────────

/// (batch, channels, height, width). Weight tensors reuse the same axes as
/// (out_channels, in_channels_per_group, kernel_h, kernel_w).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

// ── Autodiff plumbing ────────────────────────────────────────────────────

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Backward rule: given the parents and the cotangent of this node's
/// output, produce cotangents aligned with the parents. Entries for
/// parents with `requires_grad() == false` must be `None`.
pub(crate) type BackwardFn<E> = Box<dyn Fn(&[Tensor<E>], &[E]) -> Vec<Option<Vec<E>>>>;

struct Node<E: Element> {
    parents: Vec<Tensor<E>>,
    backward: BackwardFn<E>,
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph nodes. Forward values are
/// bit-identical to the recorded path; only bookkeeping is skipped.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

// ── Tensor ───────────────────────────────────────────────────────────────

struct Inner<E: Element> {
    id: u64,
    shape: Shape,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    requires_grad: bool,
    node: Option<Node<E>>,
}

/// Cheap-to-clone handle; clones share storage and gradient.
pub struct Tensor<E: Element> {
    inner: Rc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor<{}>(id={}, shape={}, grad={})",
            E::NAME,
            self.inner.id,
            self.inner.shape,
            self.inner.requires_grad
        )
    }
}

impl<E: Element> Tensor<E> {
    fn leaf(data: Vec<E>, shape: Shape, requires_grad: bool) -> Tensor<E> {
        assert_eq!(data.len(), shape.numel(), "data length must match shape");
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node: None,
            }),
        }
    }

    /// Constant leaf; gradients never flow into it.
    pub fn from_vec(data: Vec<E>, shape: Shape) -> Tensor<E> {
        Tensor::leaf(data, shape, false)
    }

    /// Trainable leaf; `backward` accumulates into its grad buffer.
    pub fn param(data: Vec<E>, shape: Shape) -> Tensor<E> {
        Tensor::leaf(data, shape, true)
    }

    pub fn zeros(shape: Shape) -> Tensor<E> {
        Tensor::from_vec(vec![E::zero(); shape.numel()], shape)
    }

    pub fn full(shape: Shape, v: E) -> Tensor<E> {
        Tensor::from_vec(vec![v; shape.numel()], shape)
    }

    pub fn scalar(v: E) -> Tensor<E> {
        Tensor::from_vec(vec![v], Shape::new(1, 1, 1, 1))
    }

    /// Concatenates single-sample tensors along the batch axis into a
    /// constant leaf (input batching, not a differentiable op).
    pub fn stack_batch(items: &[Tensor<E>]) -> crate::error::Result<Tensor<E>> {
        let first = items
            .first()
            .ok_or_else(|| crate::error::Error::Usage("stack_batch of nothing".into()))?
            .shape();
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape();
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(crate::error::Error::dim(
                    "stack_batch",
                    format!("mixed shapes {:?} vs {:?}", s.dims(), first.dims()),
                ));
            }
            n += s.n;
            data.extend_from_slice(&t.data());
        }
        Ok(Tensor::from_vec(data, Shape::new(n, first.c, first.h, first.w)))
    }

    /// Records a derived tensor. Skips node creation when grads are
    /// globally disabled or no parent can receive one.
    pub(crate) fn from_op(
        data: Vec<E>,
        shape: Shape,
        parents: Vec<Tensor<E>>,
        backward: BackwardFn<E>,
    ) -> Tensor<E> {
        let needs = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !needs {
            return Tensor::leaf(data, shape, false);
        }
        assert_eq!(data.len(), shape.numel(), "op output length must match shape");
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: true,
                node: Some(Node { parents, backward }),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> Shape {
        self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn data(&self) -> std::cell::Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() requires a scalar tensor");
        self.inner.data.borrow()[0]
    }

    /// Mutable view of the storage (optimizer steps, finite-difference
    /// probes). Callers must not hold it across op calls.
    pub(crate) fn data_mut(&self) -> std::cell::RefMut<'_, Vec<E>> {
        self.inner.data.borrow_mut()
    }

    /// Overwrites storage in place (optimizer updates, test fixtures).
    pub fn set_data(&self, values: &[E]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(values.len(), d.len(), "set_data length mismatch");
        d.copy_from_slice(values);
    }

    /// In-place elementwise update of the storage.
    pub fn update_data(&self, f: impl FnMut(&mut E)) {
        self.inner.data.borrow_mut().iter_mut().for_each(f);
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub fn accumulate_grad(&self, delta: &[E]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi = *gi + *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Leaf copy of the current value, cut from the graph.
    pub fn detach(&self) -> Tensor<E> {
        Tensor::from_vec(self.to_vec(), self.shape())
    }

    pub fn max_abs(&self) -> E {
        self.data().iter().fold(E::zero(), |m, v| m.max(v.abs()))
    }
}

// ── Backward pass ────────────────────────────────────────────────────────

/// Reverse-mode sweep from a scalar. Repeated calls accumulate into leaf
/// grads; call `zero_grad` between steps.
pub fn backward<E: Element>(loss: &Tensor<E>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Usage(format!(
            "backward requires a scalar loss, got shape {}",
            loss.shape()
        )));
    }
    if loss.inner.node.is_none() {
        return Err(Error::Usage(
            "backward on a detached tensor: nothing was recorded".into(),
        ));
    }

    // Iterative DFS postorder over parents; reversed, it visits every
    // node exactly once with consumers before producers.
    let mut order: Vec<Tensor<E>> = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    let mut stack: Vec<(Tensor<E>, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.id(), ());
    while let Some((t, child)) = stack.pop() {
        let parents = t.inner.node.as_ref().map(|n| n.parents.as_slice()).unwrap_or(&[]);
        if child < parents.len() {
            let p = parents[child].clone();
            stack.push((t, child + 1));
            if p.inner.node.is_some() && !visited.contains_key(&p.id()) {
                visited.insert(p.id(), ());
                stack.push((p, 0));
            }
        } else {
            order.push(t);
        }
    }

    let mut cots: HashMap<u64, Vec<E>> = HashMap::new();
    cots.insert(loss.id(), vec![E::one()]);

    for t in order.iter().rev() {
        let node = t.inner.node.as_ref().expect("only recorded nodes enter the order");
        let Some(cot) = cots.remove(&t.id()) else { continue };
        let parent_cots = (node.backward)(&node.parents, &cot);
        assert_eq!(
            parent_cots.len(),
            node.parents.len(),
            "backward rule must produce one entry per parent"
        );
        for (p, pc) in node.parents.iter().zip(parent_cots) {
            let Some(pc) = pc else { continue };
            assert_eq!(pc.len(), p.numel(), "cotangent length mismatch");
            if p.inner.node.is_some() {
                match cots.get_mut(&p.id()) {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&pc) {
                            *a = *a + *d;
                        }
                    }
                    None => {
                        cots.insert(p.id(), pc);
                    }
                }
            } else if p.requires_grad() {
                p.accumulate_grad(&pc);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_roundtrip() {
        let t = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0, 4.0], Shape::new(1, 1, 2, 2));
        assert_eq!(t.shape().dims(), [1, 1, 2, 2]);
        assert_eq!(t.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(!t.requires_grad());
        assert!(t.is_leaf());
    }

    #[test]
    fn backward_rejects_detached() {
        let t = Tensor::<f32>::scalar(1.0);
        let err = backward(&t).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "got {err:?}");
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let a = Tensor::<f32>::param(vec![1.0, 2.0], Shape::new(1, 2, 1, 1));
        let b = a.add(&a).unwrap();
        let err = backward(&b).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "got {err:?}");
    }

    #[test]
    fn grad_accumulates_across_calls() {
        let a = Tensor::<f64>::param(vec![3.0], Shape::new(1, 1, 1, 1));
        let loss = a.mul(&a).unwrap();
        backward(&loss).unwrap();
        assert_eq!(a.grad().unwrap(), vec![6.0]);
        backward(&loss).unwrap();
        assert_eq!(a.grad().unwrap(), vec![12.0]);
        a.zero_grad();
        assert!(a.grad().is_none());
    }

    #[test]
    fn no_grad_skips_recording() {
        let a = Tensor::<f32>::param(vec![2.0], Shape::new(1, 1, 1, 1));
        let (recorded, silent) = {
            let r = a.mul(&a).unwrap();
            let s = no_grad(|| a.mul(&a).unwrap());
            (r, s)
        };
        assert!(!recorded.is_leaf());
        assert!(silent.is_leaf());
        assert_eq!(recorded.to_vec(), silent.to_vec());
    }

    #[test]
    fn diamond_graph_accumulates_once_per_path() {
        // loss = (a*a) + (a*a) reusing the same intermediate twice
        let a = Tensor::<f64>::param(vec![5.0], Shape::new(1, 1, 1, 1));
        let sq = a.mul(&a).unwrap();
        let loss = sq.add(&sq).unwrap();
        backward(&loss).unwrap();
        // d/da 2a^2 = 4a = 20
        assert_eq!(a.grad().unwrap(), vec![20.0]);
    }
}
