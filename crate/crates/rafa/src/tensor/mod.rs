//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The graph is define-by-run: every operation on tensors that require
//! gradients records its parents and a backward closure, and `backward`
//! on a scalar loss replays the closures in reverse topological order.
//! Graphs are rebuilt on every forward pass and dropped with the loss.

mod ops;
mod spatial;

pub use ops::{avgpool1d, layer_norm, pairwise_row_sum, Padding};
pub use spatial::{bilinear_upsample, conv2d};

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{dim_error, fmt_shape, Error, Result};

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Cheap handle to a node in the computation graph. Cloning a `Tensor`
/// clones the handle, not the data, so fan-out shares a single node and
/// gradients accumulate additively.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether new operations record the backward graph on this thread.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` without recording any backward graph. Used for inference and
/// for the finite-difference passes of the gradient checker.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::Contract(format!(
            "tensor shape must list positive dimensions, got {}",
            fmt_shape(shape)
        )));
    }
    let expect: usize = shape.iter().product();
    if expect != len {
        return Err(Error::Contract(format!(
            "shape {} implies {} elements, data has {}",
            fmt_shape(shape),
            expect,
            len
        )));
    }
    Ok(())
}

impl Tensor {
    /// Leaf tensor with no gradient tracking.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        check_shape(&shape, data.len())?;
        Ok(Tensor::leaf(shape, data, false))
    }

    /// Leaf tensor that participates in backpropagation (a learnable
    /// parameter or an input being differentiated against).
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        check_shape(&shape, data.len())?;
        Ok(Tensor::leaf(shape, data, true))
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![value], false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Graph-recording constructor used by every operation. When gradients
    /// are globally disabled or no parent needs them, the result is a plain
    /// leaf and the closure is dropped.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) + 'static,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Tensor::leaf(shape, data, false);
        }
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: true,
                parents,
                backward: Some(Box::new(backward)),
            }),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.shape.clone()
    }

    pub(crate) fn shape_ref(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub(crate) fn data(&self) -> Ref<'_, Vec<f64>> {
        self.node.data.borrow()
    }

    /// Copy of the values.
    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on a {} tensor", fmt_shape(&self.node.shape));
        self.node.data.borrow()[0]
    }

    /// Copy of the accumulated gradient, if backward has run.
    pub fn grad_vec(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Overwrite the values in place. Only meaningful for leaves (the
    /// optimizer and the finite-difference probe); shape must match.
    pub fn set_data(&self, values: &[f64]) {
        let mut d = self.node.data.borrow_mut();
        assert_eq!(d.len(), values.len(), "set_data length mismatch");
        d.copy_from_slice(values);
    }

    /// In-place update of the values through a closure.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.node.data.borrow_mut());
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        if !self.node.requires_grad {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn ptr(&self) -> *const Node {
        Rc::as_ptr(&self.node)
    }

    /// Run backpropagation from a scalar loss. Every tensor in the producing
    /// graph with `requires_grad` ends up with a populated gradient buffer;
    /// each producing operation is replayed exactly once.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {}",
                fmt_shape(&self.node.shape)
            )));
        }
        if !self.node.requires_grad {
            return Err(Error::Contract(
                "backward on a tensor with no recorded graph".to_string(),
            ));
        }

        // Iterative post-order DFS over parent edges; replaying it in
        // reverse visits every node after all of its consumers, so each
        // producing operation runs exactly once with its full gradient.
        let mut topo: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.ptr());
        while let Some((t, idx)) = stack.pop() {
            if idx < t.node.parents.len() {
                let parent = t.node.parents[idx].clone();
                stack.push((t, idx + 1));
                if parent.node.requires_grad && visited.insert(parent.ptr()) {
                    stack.push((parent, 0));
                }
            } else {
                topo.push(t);
            }
        }

        self.accumulate_grad(&[1.0]);
        for t in topo.iter().rev() {
            if let Some(back) = &t.node.backward {
                let grad = t.node.grad.borrow().clone();
                if let Some(g) = grad {
                    back(&g);
                }
            }
        }
        // A branch can be pruned above when its gradient is identically
        // zero; the contract still promises a populated buffer.
        for t in &topo {
            let mut slot = t.node.grad.borrow_mut();
            if slot.is_none() {
                *slot = Some(vec![0.0; t.numel()]);
            }
        }
        Ok(())
    }

    /// New leaf with the same values and no graph history.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.shape(), self.to_vec(), false)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape_ref() != b.shape_ref() {
        return Err(dim_error(op, a.shape_ref(), b.shape_ref()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        let y = x.add(&x).unwrap();
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        let x = Tensor::param(vec![1], vec![3.0]).unwrap();
        let y = x.add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![2.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::param(vec![1], vec![3.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![6.0]);
    }

    #[test]
    fn shared_subexpression_matches_unrolled() {
        // loss = (x*x) + (x*x), once sharing the square node and once not.
        let x = Tensor::param(vec![3], vec![1.5, -2.0, 0.5]).unwrap();
        let sq = x.mul(&x).unwrap();
        let shared = sq.add(&sq).unwrap().sum();
        shared.backward().unwrap();
        let g_shared = x.grad_vec().unwrap();

        let y = Tensor::param(vec![3], vec![1.5, -2.0, 0.5]).unwrap();
        let unrolled = y
            .mul(&y)
            .unwrap()
            .add(&y.mul(&y).unwrap())
            .unwrap()
            .sum();
        unrolled.backward().unwrap();
        assert_eq!(g_shared, y.grad_vec().unwrap());
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap().sum());
        assert!(!y.requires_grad());
        assert!(y.backward().is_err());
    }
}
