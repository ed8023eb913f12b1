use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::{numel, Error, Result};

/// Inputs handed to a backward rule.
pub struct BackwardArgs<'a> {
    /// Gradient flowing into the node's output.
    pub grad: &'a [f64],
    /// Forward value of the node.
    pub value: &'a [f64],
    /// Forward values of the parents, in registration order.
    pub inputs: &'a [Rc<Vec<f64>>],
    pub input_shapes: &'a [Vec<usize>],
}

/// Returns one gradient per parent (`None` when a parent needs none).
pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Rc<Vec<f64>>,
    shape: Vec<usize>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Records eagerly evaluated operations for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Trainable leaf.
    pub fn leaf(&self, values: Vec<f64>, shape: &[usize]) -> Var<'_> {
        assert_eq!(values.len(), numel(shape), "leaf value/shape mismatch");
        self.push(Node {
            value: Rc::new(values),
            shape: shape.to_vec(),
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
        })
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, values: Vec<f64>, shape: &[usize]) -> Var<'_> {
        assert_eq!(values.len(), numel(shape), "constant value/shape mismatch");
        self.push(Node {
            value: Rc::new(values),
            shape: shape.to_vec(),
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        })
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(vec![value], &[])
    }

    /// Registers an operation with a hand-written backward rule.
    ///
    /// The rule is dropped when none of `inputs` requires a gradient.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        value: Vec<f64>,
        shape: &[usize],
        backward: BackwardFn,
    ) -> Var<'t> {
        assert_eq!(value.len(), numel(shape), "custom op value/shape mismatch");
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        self.push(Node {
            value: Rc::new(value),
            shape: shape.to_vec(),
            parents: inputs.iter().map(|v| v.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        if !root.value[0].is_finite() {
            return Err(Error::Numerical(format!(
                "loss is not finite ({})",
                root.value[0]
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.id + 1);
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Rc<Vec<f64>>> = node
                .parents
                .iter()
                .map(|&p| nodes[p].value.clone())
                .collect();
            let input_shapes: Vec<Vec<usize>> = node
                .parents
                .iter()
                .map(|&p| nodes[p].shape.clone())
                .collect();
            let parent_grads = backward(&BackwardArgs {
                grad: &grad,
                value: &node.value,
                inputs: &inputs,
                input_shapes: &input_shapes,
            });
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), nodes[p].value.len());
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Vec<f64>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` if the loss does
    /// not depend on it (or it is a constant).
    pub fn get(&self, var: &Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but yields zeros for unreachable leaves.
    pub fn get_or_zeros(&self, var: &Var<'_>) -> Vec<f64> {
        self.get(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; var.numel()])
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Vec<f64>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        self.value().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Scalar value; panics unless the tensor has one element.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a non-scalar tensor");
        v[0]
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value().to_vec(), &self.shape())
    }
}
