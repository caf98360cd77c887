//! Per-forward tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and a closure that maps
//! the output gradient to one gradient per parent. Nodes are appended in
//! topological order, so the backward sweep is a single reverse scan.

use crate::error::{Error, Result};
use crate::nn::params::ParamRegistry;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What a backward closure gets to see.
pub struct Backward<'a> {
    pub grad: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
}

pub type BackwardFn = Box<dyn Fn(&Backward<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Batch statistics observed by a train-mode normalization layer.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    stats: Vec<StatUpdate>,
    mode: Mode,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            stats: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    /// Trainable parameter leaf; its gradient is routed back to `registry`
    /// by [`ParamRegistry::accumulate`].
    pub fn param(&mut self, registry: &ParamRegistry, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let value = registry.value(name)?.clone();
        let v = self.leaf(value);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Makes later `param(_, name)` lookups return `v` instead of reading the
    /// registry.
    pub fn bind_param(&mut self, name: &str, v: Var) -> Result<()> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("parameter {name} is already bound")));
        }
        self.params.push((name.to_string(), v));
        Ok(())
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn record_stats(&mut self, update: StatUpdate) {
        self.stats.push(update);
    }

    pub fn stat_updates(&self) -> &[StatUpdate] {
        &self.stats
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Appends an op node. The closure must return one entry per parent,
    /// `None` where the parent's gradient is identically zero.
    pub fn push(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let backward = requires_grad.then_some(backward);
        self.push_node(value, parents.to_vec(), backward, requires_grad)
    }

    fn push_node(
        &mut self,
        value: Tensor,
        parents: Vec<Var>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", lv.data()[0])));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let ctx = Backward {
                grad: &grad,
                inputs: node
                    .parents
                    .iter()
                    .map(|p| &self.nodes[p.0].value)
                    .collect(),
                output: &node.value,
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            grads[i] = Some(grad);
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_accumulates_over_fanout() {
        let mut g = Graph::new(Mode::Train);
        let x = g.leaf(Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new(Mode::Train);
        let c = g.constant(Tensor::full(&[3], 1.0));
        let x = g.leaf(Tensor::full(&[3], 2.0));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new(Mode::Train);
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Dimension(_))));
    }
}
