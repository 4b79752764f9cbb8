//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation records its inputs and a closure mapping the output
//! gradient to input gradients. [`Var::backward`] walks the recorded graph
//! in reverse topological order. Inside [`no_grad`] nothing is recorded and
//! intermediate values are released as soon as they go out of scope.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::tensor::Tensor;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

/// Runs `f` without recording operations.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Maps the output gradient to one optional gradient per parent; `needs[i]`
/// says whether parent `i` wants one.
pub type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// A node of the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let v = c.get();
        c.set(v + 1);
        v
    })
}

impl Var {
    fn leaf(value: Tensor, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Self {
        Self::leaf(value, false)
    }

    /// A trainable leaf (gradients are tracked only when recording is on).
    pub fn parameter(value: Tensor) -> Self {
        Self::leaf(value, grad_enabled())
    }

    /// Records an operation; collapses to a constant when no parent needs
    /// gradients or recording is off.
    pub fn from_op(
        value: Tensor,
        parents: Vec<Var>,
        backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Self {
        if !grad_enabled() || !parents.iter().any(Var::requires_grad) {
            return Self::constant(value);
        }
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            grad: RefCell::new(None),
            parents,
            backward: Some(Box::new(backward)),
        }))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.0.value.data()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    /// Accumulated gradient, if any reached this node.
    pub fn grad(&self) -> Option<Tensor> {
        self.0
            .grad
            .borrow()
            .as_ref()
            .map(|g| Tensor::from_parts(self.shape().to_vec(), g.clone()))
    }

    /// Back-propagates from a scalar.
    pub fn backward(&self) {
        assert_eq!(self.0.value.len(), 1, "backward() needs a scalar; use backward_with");
        self.backward_with(vec![1.0]);
    }

    /// Back-propagates the given output gradient. Gradients of leaves are
    /// accumulated; those of intermediate nodes are freed on the way.
    pub fn backward_with(&self, seed: Vec<f64>) {
        assert_eq!(seed.len(), self.0.value.len());
        if !self.requires_grad() {
            return;
        }
        let order = self.topological_order();
        accumulate(&self.0.grad, seed);
        for node in order.iter().rev() {
            let Some(back) = &node.0.backward else {
                continue;
            };
            let Some(g) = node.0.grad.borrow_mut().take() else {
                continue;
            };
            let needs: Vec<bool> = node.0.parents.iter().map(Var::requires_grad).collect();
            let grads = back(&g, &needs);
            debug_assert_eq!(grads.len(), node.0.parents.len());
            for ((p, gp), need) in node.0.parents.iter().zip(grads).zip(needs) {
                if let (Some(gp), true) = (gp, need) {
                    debug_assert_eq!(gp.len(), p.0.value.len());
                    accumulate(&p.0.grad, gp);
                }
            }
        }
    }

    fn topological_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        // iterative post-order DFS
        let mut stack: Vec<(Var, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.0.id);
        while let Some((v, i)) = stack.pop() {
            if i < v.0.parents.len() {
                let p = v.0.parents[i].clone();
                stack.push((v, i + 1));
                if p.requires_grad() && seen.insert(p.0.id) {
                    stack.push((p, 0));
                }
            } else {
                order.push(v);
            }
        }
        order
    }
}

fn accumulate(slot: &RefCell<Option<Vec<f64>>>, g: Vec<f64>) {
    let mut s = slot.borrow_mut();
    match s.as_mut() {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *s = Some(g),
    }
}
