//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] is a flat tape: every operation appends a node holding its
//! eagerly computed value, and [`Graph::backward`] walks the tape once in
//! reverse, accumulating vector-Jacobian products into the leaves. The tape
//! lives for a single forward/backward pair; a new training step builds a
//! new graph. Values are plain `f64` buffers, so a forward pass through the
//! graph is bit-identical to calling the raw kernels directly.
//!
//! The op set is exactly what the model families need: dense affine maps,
//! leaky ReLU / sigmoid / tanh / exp / log nonlinearities, L1 and square
//! penalties, row-wise layer normalization, column concatenation and
//! slicing, and full-tensor sum / mean reductions.

mod gradcheck;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::gradient_check;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    LayerNorm(NodeId, f64),
    /// Deliberately wrong backward pass; exists so the gradient checker can
    /// be shown to catch a broken rule.
    #[cfg(test)]
    AbsBadGrad(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`NodeId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the node, if any was
    /// accumulated (constants and unused branches have none).
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::with_capacity(128),
            consumed: false,
        }
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tracked input: gradients will be accumulated for it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Untracked input: participates in the forward pass only.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn binary(&mut self, a: NodeId, b: NodeId, value: Tensor, op: Op) -> NodeId {
        let needs = self.needs(a) || self.needs(b);
        self.push(op, value, needs)
    }

    fn unary(&mut self, a: NodeId, value: Tensor, op: Op) -> NodeId {
        let needs = self.needs(a);
        self.push(op, value, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::add(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::sub(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    /// Adds a `[1 x n]` row vector to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = kernels::add_row(self.value(a), self.value(row))?;
        Ok(self.binary(a, row, v, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `[1 x n]` row vector.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = kernels::mul_row(self.value(a), self.value(row))?;
        Ok(self.binary(a, row, v, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = kernels::scale(self.value(a), c);
        self.unary(a, v, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMul(a, b)))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = kernels::leaky_relu(self.value(a), slope);
        self.unary(a, v, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = kernels::sigmoid(self.value(a));
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = kernels::tanh(self.value(a));
        self.unary(a, v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = kernels::exp(self.value(a));
        self.unary(a, v, Op::Exp(a))
    }

    /// Natural logarithm; all inputs must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = kernels::log(self.value(a))?;
        Ok(self.unary(a, v, Op::Log(a)))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = kernels::abs(self.value(a));
        self.unary(a, v, Op::Abs(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = kernels::square(self.value(a));
        self.unary(a, v, Op::Square(a))
    }

    /// Sum of all entries, a `[1 x 1]` tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = kernels::sum(self.value(a));
        self.unary(a, v, Op::Sum(a))
    }

    /// Mean of all entries, a `[1 x 1]` tensor.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = kernels::mean(self.value(a));
        self.unary(a, v, Op::Mean(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::concat_cols(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::ConcatCols(a, b)))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = kernels::slice_cols(self.value(a), start, end)?;
        Ok(self.unary(a, v, Op::SliceCols(a, start, end)))
    }

    /// Normalizes every row to zero mean and unit variance (biased variance
    /// plus `eps` under the square root).
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let v = kernels::layer_norm(self.value(a), eps);
        self.unary(a, v, Op::LayerNorm(a, eps))
    }

    #[cfg(test)]
    fn abs_bad_grad(&mut self, a: NodeId) -> NodeId {
        let v = kernels::abs(self.value(a));
        self.unary(a, v, Op::AbsBadGrad(a))
    }

    /// Reverse pass from a scalar loss node. The tape can run backward only
    /// once; build a fresh graph for the next step.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::config(
                "tape already ran backward; build a new graph for the next pass".to_string(),
            ));
        }
        let lt = self.value(loss);
        if lt.rows() != 1 || lt.cols() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be [1 x 1], got [{} x {}]", lt.rows(), lt.cols()),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let accum = |id: NodeId, contrib: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !before[id.0].needs_grad {
                    return;
                }
                match &mut grads[id.0] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accum(a, g.clone(), &mut grads);
                    accum(b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    accum(b, kernels::scale(&g, -1.0), &mut grads);
                    accum(a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let ga = kernels::mul(&g, &before[b.0].value).expect("checked at build");
                    let gb = kernels::mul(&g, &before[a.0].value).expect("checked at build");
                    accum(a, ga, &mut grads);
                    accum(b, gb, &mut grads);
                }
                Op::AddRow(a, row) => {
                    accum(row, kernels::col_sum(&g), &mut grads);
                    accum(a, g, &mut grads);
                }
                Op::MulRow(a, row) => {
                    let ga = kernels::mul_row(&g, &before[row.0].value).expect("checked at build");
                    let prod = kernels::mul(&g, &before[a.0].value).expect("checked at build");
                    accum(row, kernels::col_sum(&prod), &mut grads);
                    accum(a, ga, &mut grads);
                }
                Op::Scale(a, c) => {
                    accum(a, kernels::scale(&g, c), &mut grads);
                }
                Op::MatMul(a, b) => {
                    // d/dA = G B^T, d/dB = A^T G.
                    let ga = kernels::matmul_nt(&g, &before[b.0].value);
                    let gb = kernels::matmul_tn(&before[a.0].value, &g);
                    accum(a, ga, &mut grads);
                    accum(b, gb, &mut grads);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &before[a.0].value;
                    let d = g.zip_with(x, |gi, xi| if xi > 0.0 { gi } else { gi * slope });
                    accum(a, d, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = g.zip_with(y, |gi, yi| gi * yi * (1.0 - yi));
                    accum(a, d, &mut grads);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = g.zip_with(y, |gi, yi| gi * (1.0 - yi * yi));
                    accum(a, d, &mut grads);
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let d = g.zip_with(y, |gi, yi| gi * yi);
                    accum(a, d, &mut grads);
                }
                Op::Log(a) => {
                    let x = &before[a.0].value;
                    let d = g.zip_with(x, |gi, xi| gi / xi);
                    accum(a, d, &mut grads);
                }
                Op::Abs(a) => {
                    let x = &before[a.0].value;
                    let d = g.zip_with(x, |gi, xi| gi * sign(xi));
                    accum(a, d, &mut grads);
                }
                Op::Square(a) => {
                    let x = &before[a.0].value;
                    let d = g.zip_with(x, |gi, xi| gi * 2.0 * xi);
                    accum(a, d, &mut grads);
                }
                Op::Sum(a) => {
                    let x = &before[a.0].value;
                    let d = Tensor::full(x.rows(), x.cols(), g.value());
                    accum(a, d, &mut grads);
                }
                Op::Mean(a) => {
                    let x = &before[a.0].value;
                    let d = Tensor::full(x.rows(), x.cols(), g.value() / x.len() as f64);
                    accum(a, d, &mut grads);
                }
                Op::ConcatCols(a, b) => {
                    let ca = before[a.0].value.cols();
                    let (ga, gb) = kernels::split_cols(&g, ca);
                    accum(a, ga, &mut grads);
                    accum(b, gb, &mut grads);
                }
                Op::SliceCols(a, start, end) => {
                    let x = &before[a.0].value;
                    let d = kernels::embed_cols(&g, x.rows(), x.cols(), start, end);
                    accum(a, d, &mut grads);
                }
                Op::LayerNorm(a, eps) => {
                    let x = &before[a.0].value;
                    let d = kernels::layer_norm_backward(x, &node.value, &g, eps);
                    accum(a, d, &mut grads);
                }
                #[cfg(test)]
                Op::AbsBadGrad(a) => {
                    // Wrong on purpose: overshoots the true subgradient.
                    let x = &before[a.0].value;
                    let d = g.zip_with(x, |gi, xi| gi * sign(xi) * 1.05);
                    accum(a, d, &mut grads);
                }
            }
        }

        Ok(Gradients { grads })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
