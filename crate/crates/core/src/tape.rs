//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every forward operation into an append-only node
//! arena; node ids are topologically ordered by construction, so the
//! backward pass is a single reverse sweep. Tapes are rebuilt per
//! training step (define-by-run), which keeps variable-length recurrent
//! unrolling trivial.
//!
//! The op set is exactly what the pointer/swap/control networks need:
//! matmul, add (with row-broadcast bias), elementwise mul, concat and
//! slice on the last axis, axis sums, sigmoid, tanh, row softmax,
//! time reversal, transpose, and the two fused cross-entropy losses.

use crate::tensor::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, transpose, Tensor};
use thiserror::Error;

/// Probability clamp for the cross-entropy losses. A predicted
/// probability of zero at a target-1 position yields `ln(1e-12)`,
/// never NaN.
pub const CE_EPSILON: f64 = 1e-12;

/// Identifies a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Forward operation kinds. Losses carry their (constant) targets.
#[derive(Debug, Clone)]
pub enum OpKind {
    Leaf,
    /// `[m,k] @ [k,n] -> [m,n]`
    MatMul,
    /// Elementwise add; a rank-1 rhs of length `c` broadcasts over the
    /// rows of a `[r,c]` lhs (bias add).
    Add,
    /// Elementwise multiply, shapes must match.
    Mul,
    /// Concatenate along the last axis; inputs share all other dims.
    ConcatLast,
    /// Columns `[start, end)` of the last axis.
    Slice { start: usize, end: usize },
    /// Sum over one axis of a rank-1/2 tensor. Summing a rank-1 tensor
    /// yields a `[1]` scalar.
    SumAxis { axis: usize },
    Sigmoid,
    Tanh,
    /// Row-wise softmax over the last axis, computed with
    /// max-subtraction for stability.
    SoftmaxLast,
    /// Reverse along the first (time) axis.
    ReverseTime,
    /// Rank-2 transpose.
    Transpose,
    /// Mean negative log-likelihood of a categorical prediction against
    /// per-row target distributions. `mask`, when present, weights rows.
    CeCategorical { target: Tensor, mask: Option<Tensor> },
    /// Mean Bernoulli negative log-likelihood over every scalar
    /// position. `mask` weights rows.
    CeBinary { target: Tensor, mask: Option<Tensor> },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::ConcatLast => "concat-last",
            OpKind::Slice { .. } => "slice",
            OpKind::SumAxis { .. } => "sum-axis",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::SoftmaxLast => "softmax-last",
            OpKind::ReverseTime => "reverse-time",
            OpKind::Transpose => "transpose",
            OpKind::CeCategorical { .. } => "ce-categorical",
            OpKind::CeBinary { .. } => "ce-binary",
        }
    }
}

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: expects {expected} input(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("backward: root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}

struct Node {
    op: OpKind,
    parents: Vec<NodeId>,
    value: Tensor,
}

/// Define-by-run computation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Leaf, vec![], value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient buffer of a node, if the last backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient as a tensor; nodes the root does not depend on get zeros.
    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => Tensor::from_vec(self.nodes[id.0].value.shape().to_vec(), g.clone()),
            None => Tensor::zeros(self.nodes[id.0].value.shape().to_vec()),
        }
    }

    fn push(&mut self, op: OpKind, parents: Vec<NodeId>, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, parents, value });
        self.grads.push(None);
        id
    }

    // ── forward ──────────────────────────────────────────────────────

    /// Applies `op` to `inputs`, recording the node for backward.
    pub fn apply(&mut self, op: OpKind, inputs: &[NodeId]) -> Result<NodeId, TapeError> {
        let value = self.forward_value(&op, inputs)?;
        Ok(self.push(op, inputs.to_vec(), value))
    }

    fn forward_value(&self, op: &OpKind, inputs: &[NodeId]) -> Result<Tensor, TapeError> {
        let arity = |expected: usize| -> Result<(), TapeError> {
            if inputs.len() != expected {
                Err(TapeError::Arity {
                    op: op.name(),
                    expected,
                    got: inputs.len(),
                })
            } else {
                Ok(())
            }
        };
        let val = |i: usize| &self.nodes[inputs[i].0].value;

        match op {
            OpKind::Leaf => Err(TapeError::Arity {
                op: "leaf",
                expected: 0,
                got: inputs.len(),
            }),
            OpKind::MatMul => {
                arity(2)?;
                let (a, b) = (val(0), val(1));
                if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(shape_err("matmul", &[a, b]));
                }
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let mut out = vec![0.0; m * n];
                matmul_nn_acc(a.data(), b.data(), m, k, n, &mut out);
                Ok(Tensor::matrix(m, n, out))
            }
            OpKind::Add => {
                arity(2)?;
                let (a, b) = (val(0), val(1));
                if a.shape() == b.shape() {
                    let data = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(x, y)| x + y)
                        .collect();
                    Ok(Tensor::from_vec(a.shape().to_vec(), data))
                } else if a.shape().len() == 2 && b.shape().len() == 1 && a.shape()[1] == b.shape()[0]
                {
                    let c = a.shape()[1];
                    let data = a
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x + b.data()[i % c])
                        .collect();
                    Ok(Tensor::from_vec(a.shape().to_vec(), data))
                } else {
                    Err(shape_err("add", &[a, b]))
                }
            }
            OpKind::Mul => {
                arity(2)?;
                let (a, b) = (val(0), val(1));
                if a.shape() != b.shape() {
                    return Err(shape_err("mul", &[a, b]));
                }
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| x * y)
                    .collect();
                Ok(Tensor::from_vec(a.shape().to_vec(), data))
            }
            OpKind::ConcatLast => {
                if inputs.is_empty() {
                    return Err(TapeError::Arity {
                        op: "concat-last",
                        expected: 1,
                        got: 0,
                    });
                }
                let first = val(0);
                let rank = first.shape().len();
                let rows = first.rows();
                let mut total_cols = 0;
                for i in 0..inputs.len() {
                    let t = val(i);
                    if t.shape().len() != rank || t.rows() != rows {
                        return Err(shape_err("concat-last", &[first, t]));
                    }
                    total_cols += t.last_dim();
                }
                let mut data = vec![0.0; rows * total_cols];
                let mut col_off = 0;
                for i in 0..inputs.len() {
                    let t = val(i);
                    let c = t.last_dim();
                    for r in 0..rows {
                        data[r * total_cols + col_off..r * total_cols + col_off + c]
                            .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
                    }
                    col_off += c;
                }
                let shape = if rank == 1 {
                    vec![total_cols]
                } else {
                    vec![rows, total_cols]
                };
                Ok(Tensor::from_vec(shape, data))
            }
            OpKind::Slice { start, end } => {
                arity(1)?;
                let a = val(0);
                let c = a.last_dim();
                if *start >= *end || *end > c {
                    return Err(TapeError::ShapeMismatch {
                        op: "slice",
                        detail: format!("range {start}..{end} out of last dim {c}"),
                    });
                }
                let rows = a.rows();
                let w = end - start;
                let mut data = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    data.extend_from_slice(&a.data()[r * c + start..r * c + end]);
                }
                let shape = if a.shape().len() == 1 {
                    vec![w]
                } else {
                    vec![rows, w]
                };
                Ok(Tensor::from_vec(shape, data))
            }
            OpKind::SumAxis { axis } => {
                arity(1)?;
                let a = val(0);
                match (a.shape().len(), axis) {
                    (1, 0) => Ok(Tensor::scalar(a.data().iter().sum())),
                    (2, 0) => {
                        let (r, c) = (a.shape()[0], a.shape()[1]);
                        let mut out = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                out[j] += a.data()[i * c + j];
                            }
                        }
                        Ok(Tensor::from_vec(vec![c], out))
                    }
                    (2, 1) => {
                        let (r, c) = (a.shape()[0], a.shape()[1]);
                        let out = (0..r)
                            .map(|i| a.data()[i * c..(i + 1) * c].iter().sum())
                            .collect();
                        Ok(Tensor::from_vec(vec![r], out))
                    }
                    _ => Err(TapeError::ShapeMismatch {
                        op: "sum-axis",
                        detail: format!("axis {axis} on shape {:?}", a.shape()),
                    }),
                }
            }
            OpKind::Sigmoid => {
                arity(1)?;
                Ok(val(0).map(|v| 1.0 / (1.0 + (-v).exp())))
            }
            OpKind::Tanh => {
                arity(1)?;
                Ok(val(0).map(f64::tanh))
            }
            OpKind::SoftmaxLast => {
                arity(1)?;
                let a = val(0);
                let c = a.last_dim();
                let rows = a.rows();
                let mut data = vec![0.0; rows * c];
                for r in 0..rows {
                    let row = &a.data()[r * c..(r + 1) * c];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let out = &mut data[r * c..(r + 1) * c];
                    let mut sum = 0.0;
                    for (o, &v) in out.iter_mut().zip(row.iter()) {
                        *o = (v - max).exp();
                        sum += *o;
                    }
                    for o in out.iter_mut() {
                        *o /= sum;
                    }
                }
                Ok(Tensor::from_vec(a.shape().to_vec(), data))
            }
            OpKind::ReverseTime => {
                arity(1)?;
                let a = val(0);
                let rows = a.rows();
                let c = a.last_dim();
                let mut data = vec![0.0; rows * c];
                for r in 0..rows {
                    data[(rows - 1 - r) * c..(rows - r) * c]
                        .copy_from_slice(&a.data()[r * c..(r + 1) * c]);
                }
                Ok(Tensor::from_vec(a.shape().to_vec(), data))
            }
            OpKind::Transpose => {
                arity(1)?;
                let a = val(0);
                if a.shape().len() != 2 {
                    return Err(shape_err("transpose", &[a]));
                }
                let (r, c) = (a.shape()[0], a.shape()[1]);
                let mut out = vec![0.0; r * c];
                transpose(a.data(), r, c, &mut out);
                Ok(Tensor::matrix(c, r, out))
            }
            OpKind::CeCategorical { target, mask } => {
                arity(1)?;
                let p = val(0);
                check_ce_shapes("ce-categorical", p, target, mask)?;
                let c = p.last_dim();
                let rows = p.rows();
                let mut total = 0.0;
                let mut weight = 0.0;
                for r in 0..rows {
                    let w = mask.as_ref().map_or(1.0, |m| m.data()[r]);
                    if w == 0.0 {
                        continue;
                    }
                    weight += w;
                    let mut nll = 0.0;
                    for j in 0..c {
                        let t = target.data()[r * c + j];
                        if t != 0.0 {
                            nll -= t * p.data()[r * c + j].max(CE_EPSILON).ln();
                        }
                    }
                    total += w * nll;
                }
                Ok(Tensor::scalar(if weight > 0.0 { total / weight } else { 0.0 }))
            }
            OpKind::CeBinary { target, mask } => {
                arity(1)?;
                let p = val(0);
                check_ce_shapes("ce-binary", p, target, mask)?;
                let c = p.last_dim();
                let rows = p.rows();
                let mut total = 0.0;
                let mut weight = 0.0;
                for r in 0..rows {
                    let w = mask.as_ref().map_or(1.0, |m| m.data()[r]);
                    if w == 0.0 {
                        continue;
                    }
                    weight += w;
                    for j in 0..c {
                        let t = target.data()[r * c + j];
                        let pv = p.data()[r * c + j];
                        total -= w
                            * (t * pv.max(CE_EPSILON).ln()
                                + (1.0 - t) * (1.0 - pv).max(CE_EPSILON).ln());
                    }
                }
                let denom = weight * c as f64;
                Ok(Tensor::scalar(if denom > 0.0 { total / denom } else { 0.0 }))
            }
        }
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Seeds `root` with 1 and accumulates chain-rule contributions into
    /// every ancestor. Leaves the root does not depend on keep a `None`
    /// gradient, which reads back as zeros.
    pub fn backward(&mut self, root: NodeId) -> Result<(), TapeError> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(TapeError::NonScalarRoot(
                self.nodes[root.0].value.shape().to_vec(),
            ));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(vec![1.0]);

        // values live in `nodes`, gradients in `grads`; the split borrow
        // lets the backward kernels read parent values without copying
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for idx in (0..=root.0).rev() {
            let Some(go) = std::mem::take(&mut grads[idx]) else {
                continue;
            };
            backprop_node(nodes, grads, idx, &go);
            grads[idx] = Some(go);
        }
        Ok(())
    }

    // ── builder conveniences ─────────────────────────────────────────
    //
    // These panic on shape mismatch: callers inside the crate construct
    // graphs with statically known shapes, and the panic message carries
    // the same diagnostic the fallible `apply` would return.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(OpKind::MatMul, &[a, b]).unwrap()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(OpKind::Add, &[a, b]).unwrap()
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(OpKind::Mul, &[a, b]).unwrap()
    }

    pub fn concat_last(&mut self, inputs: &[NodeId]) -> NodeId {
        self.apply(OpKind::ConcatLast, inputs).unwrap()
    }

    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        self.apply(OpKind::Slice { start, end }, &[a]).unwrap()
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.apply(OpKind::SumAxis { axis }, &[a]).unwrap()
    }

    /// Full reduction to a `[1]` scalar.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        match v.shape().len() {
            1 => self.sum_axis(a, 0),
            2 => {
                let cols = self.sum_axis(a, 0);
                self.sum_axis(cols, 0)
            }
            _ => panic!("sum_all: unsupported rank {:?}", v.shape()),
        }
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.apply(OpKind::Sigmoid, &[a]).unwrap()
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.apply(OpKind::Tanh, &[a]).unwrap()
    }

    pub fn softmax_last(&mut self, a: NodeId) -> NodeId {
        self.apply(OpKind::SoftmaxLast, &[a]).unwrap()
    }

    pub fn reverse_time(&mut self, a: NodeId) -> NodeId {
        self.apply(OpKind::ReverseTime, &[a]).unwrap()
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.apply(OpKind::Transpose, &[a]).unwrap()
    }

    pub fn ce_categorical(&mut self, pred: NodeId, target: Tensor, mask: Option<Tensor>) -> NodeId {
        self.apply(OpKind::CeCategorical { target, mask }, &[pred])
            .unwrap()
    }

    pub fn ce_binary(&mut self, pred: NodeId, target: Tensor, mask: Option<Tensor>) -> NodeId {
        self.apply(OpKind::CeBinary { target, mask }, &[pred]).unwrap()
    }

    /// Multiplies by a constant scalar (recorded as a leaf).
    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let shape = self.value(a).shape().to_vec();
        let k = self.leaf(Tensor::filled(shape, factor));
        self.mul(a, k)
    }
}

fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: NodeId,
    contribution: impl FnOnce(&mut [f64]),
) {
    let n = nodes[id.0].value.numel();
    let g = grads[id.0].get_or_insert_with(|| vec![0.0; n]);
    contribution(g);
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], idx: usize, go: &[f64]) {
    let node = &nodes[idx];
    let parents = &node.parents;
    match &node.op {
        OpKind::Leaf => {}
        OpKind::MatMul => {
            let a = &nodes[parents[0].0].value;
            let b = &nodes[parents[1].0].value;
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            // dA += dC @ B^T ; dB += A^T @ dC
            accumulate(nodes, grads, parents[0], |g| {
                matmul_nt_acc(go, b.data(), m, n, k, g)
            });
            accumulate(nodes, grads, parents[1], |g| {
                matmul_tn_acc(a.data(), go, m, k, n, g)
            });
        }
        OpKind::Add => {
            let lhs_shape = nodes[parents[0].0].value.shape();
            let rhs_shape = nodes[parents[1].0].value.shape();
            accumulate(nodes, grads, parents[0], |g| {
                for (gi, &v) in g.iter_mut().zip(go) {
                    *gi += v;
                }
            });
            if lhs_shape == rhs_shape {
                accumulate(nodes, grads, parents[1], |g| {
                    for (gi, &v) in g.iter_mut().zip(go) {
                        *gi += v;
                    }
                });
            } else {
                // bias broadcast: sum the upstream gradient over rows
                let c = rhs_shape[0];
                accumulate(nodes, grads, parents[1], |g| {
                    for (i, &v) in go.iter().enumerate() {
                        g[i % c] += v;
                    }
                });
            }
        }
        OpKind::Mul => {
            let a = nodes[parents[0].0].value.data();
            let b = nodes[parents[1].0].value.data();
            accumulate(nodes, grads, parents[0], |g| {
                for ((gi, &v), &bv) in g.iter_mut().zip(go).zip(b) {
                    *gi += v * bv;
                }
            });
            accumulate(nodes, grads, parents[1], |g| {
                for ((gi, &v), &av) in g.iter_mut().zip(go).zip(a) {
                    *gi += v * av;
                }
            });
        }
        OpKind::ConcatLast => {
            let rows = node.value.rows();
            let total_cols = node.value.last_dim();
            let mut col_off = 0;
            for p in parents {
                let c = nodes[p.0].value.last_dim();
                accumulate(nodes, grads, *p, |g| {
                    for r in 0..rows {
                        for j in 0..c {
                            g[r * c + j] += go[r * total_cols + col_off + j];
                        }
                    }
                });
                col_off += c;
            }
        }
        OpKind::Slice { start, end } => {
            let c = nodes[parents[0].0].value.last_dim();
            let rows = nodes[parents[0].0].value.rows();
            let w = end - start;
            accumulate(nodes, grads, parents[0], |g| {
                for r in 0..rows {
                    for j in 0..w {
                        g[r * c + start + j] += go[r * w + j];
                    }
                }
            });
        }
        OpKind::SumAxis { axis } => {
            let pshape = nodes[parents[0].0].value.shape();
            match (pshape.len(), axis) {
                (1, 0) => accumulate(nodes, grads, parents[0], |g| {
                    for gi in g.iter_mut() {
                        *gi += go[0];
                    }
                }),
                (2, 0) => {
                    let (r, c) = (pshape[0], pshape[1]);
                    accumulate(nodes, grads, parents[0], |g| {
                        for i in 0..r {
                            for j in 0..c {
                                g[i * c + j] += go[j];
                            }
                        }
                    });
                }
                (2, 1) => {
                    let (r, c) = (pshape[0], pshape[1]);
                    accumulate(nodes, grads, parents[0], |g| {
                        for i in 0..r {
                            for j in 0..c {
                                g[i * c + j] += go[i];
                            }
                        }
                    });
                }
                _ => unreachable!("validated at forward"),
            }
        }
        OpKind::Sigmoid => {
            let y = node.value.data();
            accumulate(nodes, grads, parents[0], |g| {
                for ((gi, &v), &yv) in g.iter_mut().zip(go).zip(y) {
                    *gi += v * yv * (1.0 - yv);
                }
            });
        }
        OpKind::Tanh => {
            let y = node.value.data();
            accumulate(nodes, grads, parents[0], |g| {
                for ((gi, &v), &yv) in g.iter_mut().zip(go).zip(y) {
                    *gi += v * (1.0 - yv * yv);
                }
            });
        }
        OpKind::SoftmaxLast => {
            let y = node.value.data();
            let c = node.value.last_dim();
            let rows = node.value.rows();
            accumulate(nodes, grads, parents[0], |g| {
                for r in 0..rows {
                    let yr = &y[r * c..(r + 1) * c];
                    let gor = &go[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gor).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        g[r * c + j] += yr[j] * (gor[j] - dot);
                    }
                }
            });
        }
        OpKind::ReverseTime => {
            let rows = node.value.rows();
            let c = node.value.last_dim();
            accumulate(nodes, grads, parents[0], |g| {
                for r in 0..rows {
                    for j in 0..c {
                        g[r * c + j] += go[(rows - 1 - r) * c + j];
                    }
                }
            });
        }
        OpKind::Transpose => {
            let s = nodes[parents[0].0].value.shape();
            let (r, c) = (s[0], s[1]);
            accumulate(nodes, grads, parents[0], |g| {
                for i in 0..r {
                    for j in 0..c {
                        g[i * c + j] += go[j * r + i];
                    }
                }
            });
        }
        OpKind::CeCategorical { target, mask } => {
            let p = nodes[parents[0].0].value.data();
            let c = nodes[parents[0].0].value.last_dim();
            let rows = nodes[parents[0].0].value.rows();
            let weight: f64 = match mask {
                Some(m) => m.data().iter().sum(),
                None => rows as f64,
            };
            if weight > 0.0 {
                let scale = go[0] / weight;
                accumulate(nodes, grads, parents[0], |g| {
                    for r in 0..rows {
                        let w = mask.as_ref().map_or(1.0, |m| m.data()[r]);
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            let t = target.data()[r * c + j];
                            let pv = p[r * c + j];
                            if t != 0.0 && pv >= CE_EPSILON {
                                g[r * c + j] -= scale * w * t / pv;
                            }
                        }
                    }
                });
            }
        }
        OpKind::CeBinary { target, mask } => {
            let p = nodes[parents[0].0].value.data();
            let c = nodes[parents[0].0].value.last_dim();
            let rows = nodes[parents[0].0].value.rows();
            let weight: f64 = match mask {
                Some(m) => m.data().iter().sum(),
                None => rows as f64,
            };
            let denom = weight * c as f64;
            if denom > 0.0 {
                let scale = go[0] / denom;
                accumulate(nodes, grads, parents[0], |g| {
                    for r in 0..rows {
                        let w = mask.as_ref().map_or(1.0, |m| m.data()[r]);
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            let t = target.data()[r * c + j];
                            let pv = p[r * c + j];
                            if t != 0.0 && pv >= CE_EPSILON {
                                g[r * c + j] -= scale * w * t / pv;
                            }
                            if t != 1.0 && (1.0 - pv) >= CE_EPSILON {
                                g[r * c + j] += scale * w * (1.0 - t) / (1.0 - pv);
                            }
                        }
                    }
                });
            }
        }
    }
}

fn shape_err(op: &'static str, tensors: &[&Tensor]) -> TapeError {
    TapeError::ShapeMismatch {
        op,
        detail: tensors
            .iter()
            .map(|t| format!("{:?}", t.shape()))
            .collect::<Vec<_>>()
            .join(" vs "),
    }
}

fn check_ce_shapes(
    op: &'static str,
    pred: &Tensor,
    target: &Tensor,
    mask: &Option<Tensor>,
) -> Result<(), TapeError> {
    if pred.shape() != target.shape() {
        return Err(TapeError::ShapeMismatch {
            op,
            detail: format!("pred {:?} vs target {:?}", pred.shape(), target.shape()),
        });
    }
    if let Some(m) = mask {
        if m.numel() != pred.rows() {
            return Err(TapeError::ShapeMismatch {
                op,
                detail: format!("mask {:?} vs {} rows", m.shape(), pred.rows()),
            });
        }
    }
    Ok(())
}

// ── finite differences ───────────────────────────────────────────────

/// Central-difference step used by [`finite_difference_check`].
pub const FD_STEP: f64 = 1e-5;

/// Compares the tape gradient of a scalar-valued function against
/// central finite differences, coordinate by coordinate.
///
/// Returns the max over coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn finite_difference_check<F>(f: F, point: &Tensor) -> f64
where
    F: Fn(&mut Tape, NodeId) -> NodeId,
{
    let eval = |t: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let root = f(&mut tape, x);
        tape.value(root).item()
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let root = f(&mut tape, x);
    assert!(
        tape.value(root).is_scalar(),
        "finite_difference_check needs a scalar-valued function"
    );
    tape.backward(root).expect("scalar root");
    let analytic = tape.grad_tensor(x);

    let mut max_err: f64 = 0.0;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = point.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        max_err = max_err.max(err);
    }
    max_err
}
