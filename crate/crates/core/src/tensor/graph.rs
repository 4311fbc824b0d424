use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::{Float, Result, Tensor, TensorError};

/// Computes the gradient of each input from the gradient of the output.
///
/// The second argument flags which inputs actually need a gradient; entries
/// for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Operation tape for a single forward/backward pass.
///
/// Dropout masks are drawn from a counter-based stream keyed by
/// `(seed, dropout op index, step)`, so rebuilding the same graph with the
/// same seed and step reproduces every mask.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    mode: Mode,
    seed: u64,
    step: u64,
    dropout_ops: Cell<u64>,
    backward_done: Cell<bool>,
}

impl<T: Float> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self::with_seed(mode, 0, 0)
    }

    pub fn with_seed(mode: Mode, seed: u64, step: u64) -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            mode,
            seed,
            step,
            dropout_ops: Cell::new(0),
            backward_done: Cell::new(false),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push_node(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        })
    }

    pub(crate) fn next_dropout_key(&self) -> (u64, u64, u64) {
        let idx = self.dropout_ops.get();
        self.dropout_ops.set(idx + 1);
        (self.seed, idx, self.step)
    }

    pub(crate) fn push(
        &self,
        value: Tensor<T>,
        inputs: &[usize],
        backward: BackwardFn<T>,
    ) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_node(Node {
            value: Rc::new(value),
            inputs: inputs.to_vec(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar loss. May be called once per graph.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.graph, self) {
            return Err(TensorError::Contract(
                "loss belongs to a different graph".into(),
            ));
        }
        if self.backward_done.get() {
            return Err(TensorError::Contract(
                "backward already ran on this graph".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let out = &nodes[loss.id];
        if out.value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                out.value.shape()
            )));
        }
        self.backward_done.set(true);

        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(nodes.len(), || None);
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| nodes[i].requires_grad)
                .collect();
            let input_grads = backward(&grad_out, &needs);
            for ((&input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.len(), nodes[input].value.numel());
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients produced by one backward sweep, indexed by variable.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a leaf; exact zeros if the leaf is unreachable from the loss.
    pub fn get(&self, var: Var<'_, T>) -> Tensor<T> {
        let shape = &self.shapes[var.id];
        match &self.grads[var.id] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Tensor<T> {
        let shape = self.shapes[var.id].clone();
        match self.grads[var.id].take() {
            Some(g) => Tensor::new(shape, g).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<'g, T: Float> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad_of(self.id)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }
}

impl<T: Float> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}
