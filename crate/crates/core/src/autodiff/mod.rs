//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] lives for one forward pass. Leaves are registered with
//! [`Tape::leaf`] (gradient wanted) or [`Tape::constant`]; every operation
//! returns a [`Var`] handle into the tape. [`Tape::backward`] replays the
//! recorded operations in reverse and leaves a gradient on every
//! gradient-carrying node.
//!
//! ```
//! use slots_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.sum(y);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! Numerical guards: [`Tape::log`] evaluates `ln(x + 1e-12)` and
//! [`Tape::l2_normalize`] divides by `‖x‖ + 1e-12`, see [`EPS`].

mod check;
mod conv;
mod ops;
mod tensor;

pub use check::grad_check;
pub use conv::Conv2dOptions;
pub use tensor::Tensor;

use crate::error::{Error, Result};
use conv::ConvGeometry;

/// Additive guard used inside logarithms and normalisation denominators.
pub const EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, f64),
    AddScalar(Var),
    AddBias { input: Var, bias: Var, axis: usize },
    Matmul(Var, Var),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geo: ConvGeometry },
    AvgPool { input: Var, window: usize },
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SumAxis { input: Var, axis: usize },
    L2Normalize { input: Var, axis: usize, norms: Vec<f64> },
    Softmax { input: Var, axis: usize },
    MaskedLogSumExp { input: Var, mask: Vec<bool> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Option<Op>,
}

/// Ordered record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Registers a leaf that receives a gradient on [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, None)
    }

    /// Registers a leaf without a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, None)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
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

    /// Number of recorded nodes (leaves and operation outputs).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    ///
    /// `None` before backward has run or when `v` does not carry a gradient.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Option<Op>) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an op output; the op is kept only when some input needs a gradient.
    fn record(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, requires_grad, requires_grad.then_some(op))
    }

    /// Reverse pass from the scalar `loss`.
    ///
    /// Every node carrying a gradient ends up with a fully populated
    /// gradient; leaves that do not influence `loss` get zeros. A tape
    /// accepts exactly one backward call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::State("tape already consumed by a previous backward()".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::State("backward() on an empty tape".into()));
        }
        let loss_val = &self.nodes[loss.0].value;
        if loss_val.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                loss_val.shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(op) = self.nodes[idx].op.as_ref() else { continue };
            let Some(g) = grads[idx].take() else { continue };
            ops::backward_op(&self.nodes, idx, op, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.requires_grad.then(|| {
                    let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                    Tensor::new(node.value.shape().to_vec(), data).expect("gradient shape")
                })
            })
            .collect();
        Ok(())
    }
}

/// Adds `contribution` into the gradient slot of `v` when `v` carries a gradient.
fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]);
    f(slot);
}
