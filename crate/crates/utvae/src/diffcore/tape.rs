//! The Wengert list: primitive operations recorded in forward order and
//! replayed in reverse to compute gradients.
//!
//! A tape lives for one optimization step or one frozen forward pass.
//! [`Tape::backward`] borrows rather than consumes, so several roots of the
//! same graph can be differentiated independently; each call starts from a
//! fresh adjoint buffer. That is what lets the mixed objectives harvest a
//! weighted root for one parameter group and an unweighted root for
//! another from a single recorded forward pass.

use super::params::{GradientMap, ParamId, ParamStore};
use super::scalar;
use super::tensor::Tensor;
use super::DiffError;

/// Index of a value recorded on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

enum Op {
    Const,
    Param(ParamId),
    Neg(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Elu(NodeId),
    Square(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    BroadcastRow(NodeId),
    BroadcastCol(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols { x: NodeId, lo: usize },
    RowSum(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Scale { x: NodeId, c: f64 },
    Offset(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The forward value recorded at `id`.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    // ---- leaves ----

    /// Record a non-differentiable input (data, noise, weights).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    /// Record a parameter leaf, copying its current value from the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), store.value(id).clone())
    }

    // ---- elementwise unary ----

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).neg();
        self.push(Op::Neg(x), v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).exp();
        self.push(Op::Exp(x), v)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).ln();
        self.push(Op::Ln(x), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).sigmoid();
        self.push(Op::Sigmoid(x), v)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).softplus();
        self.push(Op::Softplus(x), v)
    }

    pub fn elu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).elu();
        self.push(Op::Elu(x), v)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).square();
        self.push(Op::Square(x), v)
    }

    /// x * c for a plain scalar constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).scale(c);
        self.push(Op::Scale { x, c }, v)
    }

    /// x + c for a plain scalar constant.
    pub fn offset(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).offset(c);
        self.push(Op::Offset(x), v)
    }

    // ---- elementwise binary (exact shape match; broadcast explicitly) ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).mul(self.value(b));
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).div(self.value(b));
        self.push(Op::Div(a, b), v)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::Matmul(a, b), v)
    }

    // ---- structural ----

    /// Replicate a 1 x c row vector down to `rows` x c.
    pub fn broadcast_row(&mut self, x: NodeId, rows: usize) -> NodeId {
        let v = self.value(x).broadcast_row(rows);
        self.push(Op::BroadcastRow(x), v)
    }

    /// Replicate an n x 1 column vector out to n x `cols`.
    pub fn broadcast_col(&mut self, x: NodeId, cols: usize) -> NodeId {
        let v = self.value(x).broadcast_col(cols);
        self.push(Op::BroadcastCol(x), v)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).concat_cols(self.value(b));
        self.push(Op::ConcatCols(a, b), v)
    }

    pub fn slice_cols(&mut self, x: NodeId, lo: usize, hi: usize) -> NodeId {
        let v = self.value(x).slice_cols(lo, hi);
        self.push(Op::SliceCols { x, lo }, v)
    }

    // ---- reductions ----

    /// Sum across columns: n x c -> n x 1.
    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).row_sum();
        self.push(Op::RowSum(x), v)
    }

    /// Sum of all elements: 1 x 1.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v)
    }

    /// Mean of all elements: 1 x 1.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).mean());
        self.push(Op::Mean(x), v)
    }

    // ---- differentiation ----

    /// Gradients of the scalar at `root` with respect to every parameter
    /// leaf on the tape. Parameters not reached from `root` are absent from
    /// the map, which readers treat as zero. May be called repeatedly with
    /// different roots over the same recorded graph.
    pub fn backward(&self, root: NodeId, n_params: usize) -> Result<GradientMap, DiffError> {
        let (rows, cols) = self.value(root).shape();
        if (rows, cols) != (1, 1) {
            return Err(DiffError::NonScalarRoot { rows, cols });
        }

        let mut adjoints: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        adjoints.resize(root.0 + 1, None);
        adjoints[root.0] = Some(Tensor::scalar(1.0));
        let mut grads = GradientMap::new(n_params);

        for idx in (0..=root.0).rev() {
            let Some(g) = adjoints[idx].take() else { continue };
            match self.nodes[idx].op {
                Op::Const => {}
                Op::Param(pid) => grads.accumulate(pid, &g),
                Op::Neg(x) => accum(&mut adjoints, x, g.neg()),
                Op::Exp(x) => {
                    let contrib = g.mul(&self.nodes[idx].value);
                    accum(&mut adjoints, x, contrib);
                }
                Op::Ln(x) => {
                    let contrib = g.div(self.value(x));
                    accum(&mut adjoints, x, contrib);
                }
                Op::Sigmoid(x) => {
                    let s = &self.nodes[idx].value;
                    let contrib = g.mul(&s.map(|v| v * (1.0 - v)));
                    accum(&mut adjoints, x, contrib);
                }
                Op::Softplus(x) => {
                    let contrib = g.mul(&self.value(x).sigmoid());
                    accum(&mut adjoints, x, contrib);
                }
                Op::Elu(x) => {
                    let contrib = g.mul(&self.value(x).map(scalar::elu_deriv));
                    accum(&mut adjoints, x, contrib);
                }
                Op::Square(x) => {
                    let contrib = g.mul(&self.value(x).scale(2.0));
                    accum(&mut adjoints, x, contrib);
                }
                Op::Add(a, b) => {
                    accum(&mut adjoints, a, g.clone());
                    accum(&mut adjoints, b, g);
                }
                Op::Sub(a, b) => {
                    accum(&mut adjoints, a, g.clone());
                    accum(&mut adjoints, b, g.neg());
                }
                Op::Mul(a, b) => {
                    accum(&mut adjoints, a, g.mul(self.value(b)));
                    accum(&mut adjoints, b, g.mul(self.value(a)));
                }
                Op::Div(a, b) => {
                    // d(a/b)/da = 1/b; d(a/b)/db = -(a/b)/b
                    accum(&mut adjoints, a, g.div(self.value(b)));
                    let contrib = g.mul(&self.nodes[idx].value).div(self.value(b)).neg();
                    accum(&mut adjoints, b, contrib);
                }
                Op::Matmul(a, b) => {
                    let da = g.matmul(&self.value(b).transpose());
                    let db = self.value(a).transpose().matmul(&g);
                    accum(&mut adjoints, a, da);
                    accum(&mut adjoints, b, db);
                }
                Op::BroadcastRow(x) => accum(&mut adjoints, x, g.col_sum()),
                Op::BroadcastCol(x) => accum(&mut adjoints, x, g.row_sum()),
                Op::ConcatCols(a, b) => {
                    let ca = self.value(a).cols();
                    accum(&mut adjoints, a, g.slice_cols(0, ca));
                    accum(&mut adjoints, b, g.slice_cols(ca, g.cols()));
                }
                Op::SliceCols { x, lo } => {
                    let mut scattered = Tensor::zeros(self.value(x).rows(), self.value(x).cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            scattered.set(i, lo + j, g.get(i, j));
                        }
                    }
                    accum(&mut adjoints, x, scattered);
                }
                Op::RowSum(x) => {
                    let cols = self.value(x).cols();
                    accum(&mut adjoints, x, g.broadcast_col(cols));
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(x).shape();
                    accum(&mut adjoints, x, Tensor::filled(r, c, g.item()));
                }
                Op::Mean(x) => {
                    let (r, c) = self.value(x).shape();
                    let per = g.item() / self.value(x).len() as f64;
                    accum(&mut adjoints, x, Tensor::filled(r, c, per));
                }
                Op::Scale { x, c } => accum(&mut adjoints, x, g.scale(c)),
                Op::Offset(x) => accum(&mut adjoints, x, g),
            }
        }
        Ok(grads)
    }
}

fn accum(adjoints: &mut [Option<Tensor>], id: NodeId, contribution: Tensor) {
    match &mut adjoints[id.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(contribution.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(contribution),
    }
}
