//! Define-by-run computation tape.
//!
//! A [`Graph`] owns every value produced during one forward pass. Ops append
//! nodes in execution order, so node indices are already a topological order
//! and [`Graph::backward`] is a single reverse sweep. Backward closures are
//! dropped after the sweep; a graph is good for exactly one backward.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    graph: u64,
}

impl Var {
    pub fn index(self) -> usize {
        self.id
    }
}

/// Arguments handed to a node's backward rule.
pub(crate) struct BackwardArgs<'a, E: Element> {
    pub grad: &'a Tensor<E>,
    pub inputs: &'a [&'a Tensor<E>],
    pub output: &'a Tensor<E>,
    /// Which inputs actually need a gradient.
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn<E> = Box<dyn Fn(&BackwardArgs<'_, E>) -> Vec<Option<Tensor<E>>>>;

struct Node<E: Element> {
    value: Tensor<E>,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<E>>,
}

pub struct Graph<E: Element> {
    id: u64,
    tracking: bool,
    consumed: Cell<bool>,
    nodes: RefCell<Vec<Node<E>>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    /// A graph that records backward rules.
    pub fn new() -> Self {
        Self::with_tracking(true)
    }

    /// A graph that only evaluates; `backward` fails with [`Error::NoTape`].
    pub fn no_grad() -> Self {
        Self::with_tracking(false)
    }

    fn with_tracking(tracking: bool) -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            tracking,
            consumed: Cell::new(false),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives a gradient (inputs, masks, targets).
    pub fn constant(&self, value: Tensor<E>) -> Var {
        self.push(value, Vec::new(), false, None)
    }

    /// A differentiable leaf (parameters, or inputs under gradient check).
    pub fn leaf(&self, value: Tensor<E>) -> Var {
        self.push(value, Vec::new(), self.tracking, None)
    }

    pub fn value(&self, v: Var) -> Tensor<E> {
        self.check(v).expect("foreign var");
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.check(v).expect("foreign var");
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.graph != self.id || v.id >= self.nodes.borrow().len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    /// Appends an op result. The backward rule is kept only when some input
    /// requires a gradient and tracking is on.
    pub(crate) fn record(
        &self,
        value: Tensor<E>,
        inputs: &[Var],
        backward: impl Fn(&BackwardArgs<'_, E>) -> Vec<Option<Tensor<E>>> + 'static,
    ) -> Var {
        let requires_grad = self.tracking && {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        let rule: Option<BackwardFn<E>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(
            value,
            inputs.iter().map(|v| v.id).collect(),
            requires_grad,
            rule,
        )
    }

    fn push(
        &self,
        value: Tensor<E>,
        inputs: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn<E>>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            inputs,
            requires_grad,
            backward,
        });
        Var { id, graph: self.id }
    }

    /// Reverse sweep from a `[1]`-shaped root.
    pub fn backward(&self, root: Var) -> Result<Gradients<E>> {
        if !self.tracking || self.consumed.get() {
            return Err(Error::NoTape);
        }
        self.check(root)?;
        let mut nodes = self.nodes.borrow_mut();
        let root_shape = nodes[root.id].value.shape().to_vec();
        if root_shape != [1] {
            return Err(Error::NotScalar(root_shape));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Tensor<E>>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::ones([1]));
        for id in (0..=root.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let rule = nodes[id].backward.take();
            if let Some(rule) = rule {
                let node = &nodes[id];
                let inputs: Vec<&Tensor<E>> =
                    node.inputs.iter().map(|&i| &nodes[i].value).collect();
                let needs: Vec<bool> = node
                    .inputs
                    .iter()
                    .map(|&i| nodes[i].requires_grad)
                    .collect();
                let input_grads = rule(&BackwardArgs {
                    grad: &grad,
                    inputs: &inputs,
                    output: &node.value,
                    needs: &needs,
                });
                debug_assert_eq!(input_grads.len(), node.inputs.len());
                for (&input, g) in node.inputs.iter().zip(input_grads) {
                    let Some(g) = g else { continue };
                    if !nodes[input].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.shape(), nodes[input].value.shape());
                    grads[input] = Some(match grads[input].take() {
                        None => g,
                        Some(acc) => accumulate(acc, &g),
                    });
                }
            }
            grads[id] = Some(grad);
        }
        // Only leaves and the root are worth keeping, but the sweep already
        // paid for the intermediates; callers index by Var.
        for node in nodes.iter_mut() {
            node.backward = None;
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }
}

fn accumulate<E: Element>(acc: Tensor<E>, g: &Tensor<E>) -> Tensor<E> {
    let shape = acc.shape().to_vec();
    let mut data = acc.into_vec();
    for (a, &b) in data.iter_mut().zip(g.data()) {
        *a = *a + b;
    }
    Tensor::from_parts(shape, data)
}

/// Gradients of a backward root with respect to every reachable node.
pub struct Gradients<E: Element> {
    graph: u64,
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape when `v` is unreachable.
    pub fn get_or_zeros(&self, graph: &Graph<E>, v: Var) -> Tensor<E> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v)))
    }
}
