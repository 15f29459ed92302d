//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape: every operation pushes a node holding
//! its output value, its input ids and a [`Backward`] rule. Node ids are
//! handed out in creation order, so iterating ids downwards from the root is
//! a valid reverse topological order. The tape is rebuilt for every forward
//! pass.
//!
//! Leaves are either *variables* (gradients are reported for them) or
//! *constants* (no gradient is tracked, and subgraphs depending only on
//! constants are skipped during the backward sweep).

mod gradcheck;
pub mod ops;

use std::collections::HashMap;

pub use gradcheck::{finite_diff_check, GradientReport, LeafError};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local derivative rule of one operation.
pub trait Backward {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, or `None` where `needs[i]` is false or
    /// the input receives no gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<NodeId>,
    rule: Option<Box<dyn Backward>>,
    requires_grad: bool,
    variable: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad: true,
            variable: true,
        })
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad: false,
            variable: false,
        })
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].rule.as_ref().map_or("leaf", |r| r.name())
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    /// Records an operation. `value` must already be computed from the
    /// values of `inputs`.
    pub fn record(&mut self, inputs: &[NodeId], value: Tensor, rule: impl Backward + 'static) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(Node {
            value,
            inputs: inputs.to_vec(),
            rule: Some(Box::new(rule)),
            requires_grad,
            variable: false,
        })
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    /// Gradients of the rank-0 `root` with respect to every variable leaf.
    ///
    /// Multiple uses of a value accumulate their incoming gradients. Variable
    /// leaves that `root` does not depend on get zero tensors.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.rank() != 0 {
            return Err(Error::invalid(format!(
                "backward requires a rank-0 root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(&[], root_value.precision()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = node.rule.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|i| self.nodes[i.0].requires_grad).collect();
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            let local = rule.backward(&inputs, &node.value, &grad, &needs);
            debug_assert_eq!(local.len(), node.inputs.len(), "{}", rule.name());
            for ((input, g), need) in node.inputs.iter().zip(local).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                debug_assert_eq!(g.shape(), self.nodes[input.0].value.shape(), "{}", rule.name());
                accumulate(&mut grads[input.0], g);
            }
        }

        let mut out = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.variable {
                continue;
            }
            let g = grads
                .get_mut(idx)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(node.value.shape(), node.value.precision()));
            out.insert(NodeId(idx), g);
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
            acc.round_in_place();
        }
        None => *slot = Some(g),
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
