//! Define-by-run compute graph with reverse-mode differentiation.
//!
//! The graph owns every tensor created during a step. Leaves are inserted
//! with [`Graph::leaf`] (trainable) or [`Graph::constant`]; operations record
//! a node only when some input requires grad, so constant subgraphs cost no
//! tape space. The graph is rebuilt each training step.

use super::tensor::Tensor;
use crate::error::{CdpclError, Result};

/// Handle to a tensor stored on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// A differentiable operation: given input values, the forward output and the
/// gradient flowing into the output, produce gradients for each input.
///
/// `needs[i]` is false when input `i` does not require grad; implementations
/// may return `None` in that slot to skip the work.
pub trait GradOp {
    fn name(&self) -> &'static str;
    fn input_grads(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        out_grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    op: Box<dyn GradOp>,
    inputs: Vec<Var>,
    output: Var,
}

/// Recorded computation for one forward pass.
pub struct Graph {
    vals: Vec<Tensor>,
    requires: Vec<bool>,
    grads: Vec<Option<Tensor>>,
    nodes: Vec<Node>,
    warnings: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { vals: Vec::new(), requires: Vec::new(), grads: Vec::new(), nodes: Vec::new(), warnings: 0 }
    }

    /// Insert a tensor that participates in backward.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push_value(t, requires_grad)
    }

    /// Insert a tensor treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_value(t, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.push_value(Tensor::scalar(v), false)
    }

    fn push_value(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.vals.push(t);
        self.requires.push(requires_grad);
        self.grads.push(None);
        Var(self.vals.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Gradient accumulated for `v` by the last [`Graph::backward`] call.
    /// Absent for tensors with `requires_grad == false`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }

    /// Count of numeric-guard clamps (log/div/normalize below epsilon).
    pub fn warning_count(&self) -> u64 {
        self.warnings
    }

    pub(crate) fn warn(&mut self) {
        self.warnings += 1;
    }

    /// Record `op` producing `value` from `inputs`. The node is kept only
    /// when some input requires grad.
    pub(crate) fn record(&mut self, op: Box<dyn GradOp>, inputs: &[Var], value: Tensor) -> Var {
        let requires = inputs.iter().any(|v| self.requires[v.0]);
        let out = self.push_value(value, requires);
        if requires {
            self.nodes.push(Node { op, inputs: inputs.to_vec(), output: out });
        }
        out
    }

    /// Reverse sweep from a scalar loss. Every tensor with `requires_grad`
    /// reachable from `loss` receives its accumulated gradient; the tape is
    /// consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.vals[loss.0].is_scalar() {
            return Err(CdpclError::Contract {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", self.vals[loss.0].shape()),
            });
        }
        let mut seed = Tensor::zeros(self.vals[loss.0].shape());
        seed.data_mut()[0] = 1.0;
        self.grads[loss.0] = Some(seed);

        let nodes = std::mem::take(&mut self.nodes);
        for node in nodes.iter().rev() {
            let out_grad = match self.grads[node.output.0].take() {
                Some(g) => g,
                None => continue,
            };
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.requires[v.0]).collect();
            if !needs.iter().any(|&n| n) {
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.vals[v.0]).collect();
            let output = &self.vals[node.output.0];
            let input_grads = node.op.input_grads(&inputs, output, &out_grad, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op.name());
            for (var, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                debug_assert_eq!(
                    g.shape(),
                    self.vals[var.0].shape(),
                    "grad shape mismatch in op {}",
                    node.op.name()
                );
                match &mut self.grads[var.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            }
            // Interior gradients of constants are not part of the contract.
            if !self.requires[node.output.0] {
                self.grads[node.output.0] = None;
            }
        }
        // Drop gradients on nodes the caller never marked as leaves requiring
        // grad but that were intermediate: keep them; harmless and useful for
        // inspection. Gradients for requires_grad=false tensors stay absent.
        for (i, req) in self.requires.iter().enumerate() {
            if !req {
                self.grads[i] = None;
            }
        }
        Ok(())
    }
}
