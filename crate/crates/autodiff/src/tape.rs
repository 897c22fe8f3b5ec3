use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::{Scalar, Tensor};

/// Backward rule: receives the upstream gradient and a flag per parent telling
/// whether that parent needs a gradient; returns one optional gradient buffer
/// per parent, in parent order.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Wengert list of recorded operations.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub(crate) fn record<F>(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: F,
    ) -> Var<'_, T>
    where
        F: Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            op,
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse sweep from a scalar root. Node ids are assigned in creation
    /// order, so descending id order is a reverse topological order.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if root_node.value.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(
                root_node.value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![T::one()]);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let contributions = backward(&upstream, &needs);
            for ((&parent, contribution), &need) in
                node.parents.iter().zip(contributions).zip(&needs)
            {
                let Some(contribution) = contribution else {
                    continue;
                };
                if !need {
                    continue;
                }
                if let Some(bad) = contribution.iter().position(|v| !v.is_finite()) {
                    return Err(AutodiffError::Numeric {
                        op: node.op,
                        detail: format!("gradient element {bad} for input node {parent}"),
                    });
                }
                match &mut grads[parent] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contribution) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[id] = Some(upstream);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> T {
        self.value().item()
    }
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root w.r.t. `var`; `None` when the root does not
    /// depend on it.
    pub fn get(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads[var.id].as_ref().map(|g| {
            Tensor::new(self.shapes[var.id].clone(), g.clone()).expect("gradient matches shape")
        })
    }

    /// Like [`Gradients::get`] but returns zeros for unreached nodes.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.id].clone()))
    }
}
