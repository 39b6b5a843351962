//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value, the ids of its
//! inputs and a boxed [`Op`] that knows how to pull an output adjoint back to
//! its inputs. Leaves carry `requires_grad`; a node requires a gradient when
//! any of its inputs does. `backward` walks the tape in reverse insertion
//! order, which is a reverse topological order because inputs always precede
//! their consumers.

mod gradcheck;
pub mod ops;

pub use gradcheck::{grad_check, grad_check_f32, grad_check_with};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
pub trait Op<S: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns the adjoint for each input; `None` where `needs[k]` is false.
    fn backward(
        &self,
        inputs: &[&Tensor<S>],
        output: &Tensor<S>,
        grad_out: &[S],
        needs: &[bool],
    ) -> Vec<Option<Vec<S>>>;
}

struct Node<S: Real> {
    value: Tensor<S>,
    inputs: Vec<usize>,
    op: Option<Box<dyn Op<S>>>,
    requires_grad: bool,
}

pub struct Tape<S: Real> {
    nodes: Vec<Node<S>>,
    // accumulated gradients of requires_grad leaves, indexed by node id
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> Var {
        let requires_grad = tensor.requires_grad;
        self.push_node(tensor, Vec::new(), None, requires_grad)
    }

    /// Records a constant (never tracked).
    pub fn constant(&mut self, mut tensor: Tensor<S>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn param(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor.with_grad())
    }

    /// Appends the result of an operation.
    pub fn push(&mut self, value: Tensor<S>, inputs: &[Var], op: impl Op<S> + 'static) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let ids = inputs.iter().map(|v| v.0).collect();
        let op: Option<Box<dyn Op<S>>> = if requires_grad { Some(Box::new(op)) } else { None };
        self.push_node(value, ids, op, requires_grad)
    }

    fn push_node(
        &mut self,
        mut value: Tensor<S>,
        inputs: Vec<usize>,
        op: Option<Box<dyn Op<S>>>,
        requires_grad: bool,
    ) -> Var {
        value.requires_grad = requires_grad;
        self.nodes.push(Node {
            value,
            inputs,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a tracked leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of a tracked leaf, zeros when it was never reached.
    pub fn grad_or_zero(&self, v: Var) -> Vec<S> {
        match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![S::zero(); self.value(v).len()],
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Back-propagates from a scalar loss. Gradients accumulate into tracked
    /// leaves across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(Error::DetachedGraph);
        }
        let mut adjoint: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        adjoint[loss.0] = Some(vec![S::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adjoint[id].take() else { continue };
            let node = &self.nodes[id];
            let Some(op) = node.op.as_ref() else {
                // leaf
                if node.requires_grad {
                    match &mut self.grads[id] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                        slot => *slot = Some(g),
                    }
                }
                continue;
            };
            let inputs: Vec<&Tensor<S>> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i].requires_grad).collect();
            let in_grads = op.backward(&inputs, &node.value, &g, &needs);
            debug_assert_eq!(in_grads.len(), node.inputs.len(), "{}", op.name());
            for (k, ig) in in_grads.into_iter().enumerate() {
                let Some(ig) = ig else { continue };
                if !needs[k] {
                    continue;
                }
                let src = node.inputs[k];
                debug_assert_eq!(ig.len(), self.nodes[src].value.len(), "{}", op.name());
                match &mut adjoint[src] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::ops;
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, -2.0, 5.0]));
        let l = ops::sum(&mut tape, x);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_x() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        let sq = ops::mul(&mut tape, x, x).unwrap();
        let l = ops::sum(&mut tape, sq);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![3.0]));
        let l = ops::sum(&mut tape, x);
        tape.backward(l).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn non_scalar_and_detached_losses_are_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
        let c = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let l = ops::sum(&mut tape, c);
        assert!(matches!(tape.backward(l), Err(Error::DetachedGraph)));
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grad(a f + b g) = a grad f + b grad g
        let run = |a: f64, b: f64| {
            let mut tape = Tape::<f64>::new();
            let x = tape.param(Tensor::from_vec(vec![0.3, -1.2, 2.0]));
            let f = {
                let e = ops::exp(&mut tape, x);
                ops::sum(&mut tape, e)
            };
            let g = {
                let sq = ops::mul(&mut tape, x, x).unwrap();
                ops::sum(&mut tape, sq)
            };
            let af = ops::scale(&mut tape, f, a);
            let bg = ops::scale(&mut tape, g, b);
            let l = ops::add(&mut tape, af, bg).unwrap();
            tape.backward(l).unwrap();
            tape.grad(x).unwrap().to_vec()
        };
        let gf = run(1.0, 0.0);
        let gg = run(0.0, 1.0);
        let mix = run(2.5, -0.75);
        for i in 0..3 {
            assert!((mix[i] - (2.5 * gf[i] - 0.75 * gg[i])).abs() < 1e-12);
        }
    }
}
