//! Reverse-mode automatic differentiation over a dynamically recorded graph.
//!
//! A [`Graph`] records operations as they execute; forward values are
//! computed eagerly with the kernels in [`crate::tensor`], and
//! [`Graph::backward`] walks the tape in reverse. Node indices are assigned
//! in recording order, which is by construction a topological order, so the
//! backward pass is a single reverse loop with no sorting — gradient
//! accumulation order is fixed and runs are bit-reproducible.
//!
//! Leaf nodes either own their tensor or share one behind an [`Arc`], so a
//! graph can reference model parameters without copying them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef(usize);

enum NodeValue {
    Owned(Tensor),
    Shared(Arc<Tensor>),
}

impl NodeValue {
    fn get(&self) -> &Tensor {
        match self {
            NodeValue::Owned(t) => t,
            NodeValue::Shared(t) => t,
        }
    }
}

enum Op {
    Leaf,
    /// Rows of a table gathered by index.
    Gather { table: NodeRef, rows: Vec<usize> },
    MatMul { a: NodeRef, b: NodeRef },
    /// `a * b^T`.
    MatMulNt { a: NodeRef, b: NodeRef },
    Add { a: NodeRef, b: NodeRef },
    Scale { x: NodeRef, c: f32 },
    Gelu { x: NodeRef },
    LayerNorm { x: NodeRef, gain: NodeRef, bias: NodeRef, eps: f32 },
    /// Causal row-wise softmax of `scale * x`.
    SoftmaxCausal { x: NodeRef, scale: f32 },
    SliceCols { x: NodeRef, start: usize, end: usize },
    ConcatCols { xs: Vec<NodeRef> },
    /// Scalar mean NLL of `targets` under row-wise softmax of the logits.
    CrossEntropy { logits: NodeRef, targets: Vec<u32> },
}

struct Node {
    op: Op,
    value: NodeValue,
}

/// A dynamically recorded computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: NodeValue) -> NodeRef {
        self.nodes.push(Node { op, value });
        NodeRef(self.nodes.len() - 1)
    }

    /// Value of a node.
    pub fn value(&self, n: NodeRef) -> &Tensor {
        self.nodes[n.0].value.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf node that owns its tensor.
    pub fn leaf(&mut self, t: Tensor) -> NodeRef {
        self.push(Op::Leaf, NodeValue::Owned(t))
    }

    /// Inserts a leaf node that shares a tensor (no copy). Used for model
    /// parameters.
    pub fn shared_leaf(&mut self, t: Arc<Tensor>) -> NodeRef {
        self.push(Op::Leaf, NodeValue::Shared(t))
    }

    pub fn gather(&mut self, table: NodeRef, rows: &[usize]) -> Result<NodeRef> {
        let v = tensor::gather_rows(self.value(table), rows)?;
        Ok(self.push(
            Op::Gather { table, rows: rows.to_vec() },
            NodeValue::Owned(v),
        ))
    }

    pub fn matmul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul { a, b }, NodeValue::Owned(v)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let v = tensor::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMulNt { a, b }, NodeValue::Owned(v)))
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add { a, b }, NodeValue::Owned(v)))
    }

    pub fn scale(&mut self, x: NodeRef, c: f32) -> NodeRef {
        let v = tensor::scale(self.value(x), c);
        self.push(Op::Scale { x, c }, NodeValue::Owned(v))
    }

    pub fn gelu(&mut self, x: NodeRef) -> NodeRef {
        let v = tensor::gelu(self.value(x));
        self.push(Op::Gelu { x }, NodeValue::Owned(v))
    }

    pub fn layer_norm(
        &mut self,
        x: NodeRef,
        gain: NodeRef,
        bias: NodeRef,
        eps: f32,
    ) -> Result<NodeRef> {
        let v = tensor::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, NodeValue::Owned(v)))
    }

    pub fn softmax_causal(&mut self, x: NodeRef, scale: f32) -> Result<NodeRef> {
        let v = tensor::softmax_rows_causal(self.value(x), scale)?;
        Ok(self.push(Op::SoftmaxCausal { x, scale }, NodeValue::Owned(v)))
    }

    pub fn slice_cols(&mut self, x: NodeRef, start: usize, end: usize) -> Result<NodeRef> {
        let v = tensor::slice_cols(self.value(x), start, end)?;
        Ok(self.push(Op::SliceCols { x, start, end }, NodeValue::Owned(v)))
    }

    pub fn concat_cols(&mut self, xs: &[NodeRef]) -> Result<NodeRef> {
        let parts: Vec<&Tensor> = xs.iter().map(|&n| self.value(n)).collect();
        let v = tensor::concat_cols(&parts)?;
        Ok(self.push(Op::ConcatCols { xs: xs.to_vec() }, NodeValue::Owned(v)))
    }

    pub fn cross_entropy(&mut self, logits: NodeRef, targets: &[u32]) -> Result<NodeRef> {
        let v = tensor::cross_entropy(self.value(logits), targets)?;
        Ok(self.push(
            Op::CrossEntropy { logits, targets: targets.to_vec() },
            NodeValue::Owned(Tensor::scalar(v)),
        ))
    }

    /// Reverse-mode pass from a scalar loss node. Returns per-node gradients;
    /// nodes the loss does not depend on have no gradient (treated as zero).
    pub fn backward(&self, loss: NodeRef) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(dy); // keep for the caller
                    continue;
                }
                Op::Gather { table, rows } => {
                    let mut dt = take_or_zeros(&mut grads, table.0, self.value(*table).shape());
                    tensor::scatter_add_rows(&mut dt, rows, &dy)?;
                    grads[table.0] = Some(dt);
                }
                Op::MatMul { a, b } => {
                    // dA += dC * B^T ; dB += A^T * dC
                    let da = tensor::matmul_nt(&dy, self.value(*b))?;
                    let db = tensor::matmul_tn(self.value(*a), &dy)?;
                    accumulate(&mut grads, a.0, da)?;
                    accumulate(&mut grads, b.0, db)?;
                }
                Op::MatMulNt { a, b } => {
                    // C = A * B^T : dA += dC * B ; dB += dC^T * A
                    let da = tensor::matmul(&dy, self.value(*b))?;
                    let db = tensor::matmul_tn(&dy, self.value(*a))?;
                    accumulate(&mut grads, a.0, da)?;
                    accumulate(&mut grads, b.0, db)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, a.0, dy.clone())?;
                    accumulate(&mut grads, b.0, dy)?;
                }
                Op::Scale { x, c } => {
                    accumulate(&mut grads, x.0, tensor::scale(&dy, *c))?;
                }
                Op::Gelu { x } => {
                    let dx = tensor::gelu_vjp(self.value(*x), &dy)?;
                    accumulate(&mut grads, x.0, dx)?;
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (dx, dgain, dbias) =
                        tensor::layer_norm_vjp(self.value(*x), self.value(*gain), *eps, &dy)?;
                    accumulate(&mut grads, x.0, dx)?;
                    accumulate(&mut grads, gain.0, dgain)?;
                    accumulate(&mut grads, bias.0, dbias)?;
                }
                Op::SoftmaxCausal { x, scale } => {
                    let probs = self.value(NodeRef(idx));
                    let dx = tensor::softmax_vjp(probs, &dy, *scale)?;
                    accumulate(&mut grads, x.0, dx)?;
                }
                Op::SliceCols { x, start, end } => {
                    let (_, w) = dy.dims2();
                    debug_assert_eq!(w, end - start);
                    let mut dx = take_or_zeros(&mut grads, x.0, self.value(*x).shape());
                    tensor::add_into_cols(&mut dx, &dy, *start)?;
                    grads[x.0] = Some(dx);
                }
                Op::ConcatCols { xs } => {
                    let mut off = 0;
                    for part in xs {
                        let (_, w) = self.value(*part).dims2();
                        let dpart = tensor::slice_cols(&dy, off, off + w)?;
                        accumulate(&mut grads, part.0, dpart)?;
                        off += w;
                    }
                }
                Op::CrossEntropy { logits, targets } => {
                    let up = dy.data()[0];
                    let dl = tensor::cross_entropy_grad(self.value(*logits), targets, up)?;
                    accumulate(&mut grads, logits.0, dl)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn take_or_zeros(grads: &mut [Option<Tensor>], idx: usize, shape: &[usize]) -> Tensor {
    grads[idx].take().unwrap_or_else(|| Tensor::zeros(shape))
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, add: Tensor) -> Result<()> {
    match &mut grads[idx] {
        Some(existing) => tensor::add_assign(existing, &add)?,
        slot @ None => *slot = Some(add),
    }
    Ok(())
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a node, if the loss depends on it.
    pub fn get(&self, n: NodeRef) -> Option<&Tensor> {
        self.grads[n.0].as_ref()
    }

    /// Like [`Gradients::get`] but returns zeros for disconnected nodes.
    pub fn get_or_zeros(&self, n: NodeRef, shape: &[usize]) -> Tensor {
        match self.grads[n.0].as_ref() {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }

    /// Moves the gradient out of the structure.
    pub fn take(&mut self, n: NodeRef) -> Option<Tensor> {
        self.grads[n.0].take()
    }
}
