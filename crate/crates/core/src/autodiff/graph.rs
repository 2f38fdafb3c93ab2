//! Define-by-run computation graph with two backward modes.
//!
//! `backward` walks the tape in reverse and accumulates plain `f64` adjoints
//! (the fast path used by every SGD loop). `grad_nodes` walks the same tape
//! but emits the adjoint computation as new graph ops, so a gradient can be
//! used as a differentiable quantity — this is how the one-step inner update
//! stays inside the graph and the generator objective picks up its
//! second-order term.
//!
//! Nodes are arena-allocated; parents always precede children, so reverse
//! index order is a valid reverse-topological order and every backward pass
//! visits each node exactly once. Accumulation order is fixed by the tape,
//! which makes both backward modes bit-deterministic.

use super::optim::GradientMap;
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalarConst(NodeId),
    /// [m,n] + [n], bias broadcast over rows.
    AddRow(NodeId, NodeId),
    /// [m,n] * [n], column-wise scaling broadcast over rows.
    MulRow(NodeId, NodeId),
    /// [m,n] -> [n], sum over rows.
    SumRows(NodeId),
    /// [n] -> [m,n].
    BroadcastRows(NodeId),
    /// [m,n] -> [m], sum over columns.
    RowSum(NodeId),
    /// [m] -> [m,n].
    BroadcastCols(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Recip(NodeId),
    /// Elementwise max(x, c).
    FloorAt(NodeId, f64),
    RowSoftmax(NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
    BroadcastScalar(NodeId),
    /// Tensor times a rank-0 node.
    MulScalar(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
    SliceRows(NodeId, usize, usize),
    /// Zero rows added before and after.
    PadRows(NodeId, usize),
    /// Fused mean cross-entropy of row logits against class indices.
    CrossEntropy(NodeId, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.nodes[id.0].value.scalar_value()
    }

    /// Registered trainable leaf. Its slot index in the returned
    /// [`GradientMap`] is the registration order.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        let id = self.push_unchecked(Op::Leaf, value, true);
        self.params.push(id);
        id
    }

    /// Register every tensor of a parameter collection, in order.
    pub fn params(&mut self, tensors: &[Tensor]) -> Vec<NodeId> {
        tensors.iter().map(|t| self.param(t.clone())).collect()
    }

    /// Differentiable but unregistered leaf (e.g. the frozen model weights a
    /// gradient is taken through without being reported).
    pub fn leaf_grad(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Leaf, value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Leaf, value, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, name: &'static str) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name.into() });
        }
        Ok(self.push_unchecked(op, value, needs_grad))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── builders ────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v, self.needs(a) || self.needs(b), "matmul")
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).transpose()?;
        self.push(Op::Transpose(a), v, self.needs(a), "transpose")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), v, self.needs(a) || self.needs(b), "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub(a, b), v, self.needs(a) || self.needs(b), "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        self.push(Op::Mul(a, b), v, self.needs(a) || self.needs(b), "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v, self.needs(a), "scale")
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalarConst(a), v, self.needs(a), "add_scalar")
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        let b = self.value(bias);
        if b.shape() != [n] {
            return Err(Error::Shape {
                op: "add_row",
                detail: format!("matrix [{m}x{n}] + bias {:?}", b.shape()),
            });
        }
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                data.push(self.value(a).data()[i * n + j] + b.data()[j]);
            }
        }
        let v = Tensor::matrix(m, n, data)?;
        self.push(Op::AddRow(a, bias), v, self.needs(a) || self.needs(bias), "add_row")
    }

    pub fn mul_row(&mut self, a: NodeId, cols: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        let c = self.value(cols);
        if c.shape() != [n] {
            return Err(Error::Shape {
                op: "mul_row",
                detail: format!("matrix [{m}x{n}] * cols {:?}", c.shape()),
            });
        }
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                data.push(self.value(a).data()[i * n + j] * c.data()[j]);
            }
        }
        let v = Tensor::matrix(m, n, data)?;
        self.push(Op::MulRow(a, cols), v, self.needs(a) || self.needs(cols), "mul_row")
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += self.value(a).data()[i * n + j];
            }
        }
        self.push(Op::SumRows(a), Tensor::vector(out), self.needs(a), "sum_rows")
    }

    pub fn broadcast_rows(&mut self, a: NodeId, m: usize) -> Result<NodeId> {
        let v = self.value(a);
        if v.shape().len() != 1 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                detail: format!("expected vector, got {:?}", v.shape()),
            });
        }
        let n = v.len();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(v.data());
        }
        let t = Tensor::matrix(m, n, data)?;
        self.push(Op::BroadcastRows(a), t, self.needs(a), "broadcast_rows")
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            out.push(self.value(a).data()[i * n..(i + 1) * n].iter().sum());
        }
        self.push(Op::RowSum(a), Tensor::vector(out), self.needs(a), "row_sum")
    }

    pub fn broadcast_cols(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let v = self.value(a);
        if v.shape().len() != 1 {
            return Err(Error::Shape {
                op: "broadcast_cols",
                detail: format!("expected vector, got {:?}", v.shape()),
            });
        }
        let m = v.len();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for _ in 0..n {
                data.push(v.data()[i]);
            }
        }
        let t = Tensor::matrix(m, n, data)?;
        self.push(Op::BroadcastCols(a), t, self.needs(a), "broadcast_cols")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v, self.needs(a), "relu")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v, self.needs(a), "tanh")
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(Op::Recip(a), v, self.needs(a), "recip")
    }

    pub fn floor_at(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.max(c));
        self.push(Op::FloorAt(a, c), v, self.needs(a), "floor_at")
    }

    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &self.value(a).data()[i * n..(i + 1) * n];
            data.extend(softmax_row(row));
        }
        let t = Tensor::matrix(m, n, data)?;
        self.push(Op::RowSoftmax(a), t, self.needs(a), "row_softmax")
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::EmptyInput("mean_all"));
        }
        let mean = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::MeanAll(a), Tensor::scalar(mean), self.needs(a), "mean_all")
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push(Op::SumAll(a), Tensor::scalar(s), self.needs(a), "sum_all")
    }

    pub fn broadcast_scalar(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let s = self.value(a).scalar_value()?;
        let t = Tensor::filled(shape.clone(), s);
        self.push(Op::BroadcastScalar(a), t, self.needs(a), "broadcast_scalar")
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s).scalar_value()?;
        let v = self.value(a).scale(sv);
        self.push(Op::MulScalar(a, s), v, self.needs(a) || self.needs(s), "mul_scalar")
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).concat_rows(self.value(b))?;
        self.push(Op::ConcatRows(a, b), v, self.needs(a) || self.needs(b), "concat_rows")
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        if start > end || end > m {
            return Err(Error::Shape {
                op: "slice_rows",
                detail: format!("rows {start}..{end} of {m}"),
            });
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let t = Tensor::matrix(end - start, n, data)?;
        self.push(Op::SliceRows(a, start, end), t, self.needs(a), "slice_rows")
    }

    pub fn pad_rows(&mut self, a: NodeId, before: usize, after: usize) -> Result<NodeId> {
        let (m, n) = self.value(a).dims2()?;
        let mut data = vec![0.0; (before + m + after) * n];
        data[before * n..(before + m) * n].copy_from_slice(self.value(a).data());
        let t = Tensor::matrix(before + m + after, n, data)?;
        self.push(Op::PadRows(a, before), t, self.needs(a), "pad_rows")
    }

    /// Mean cross-entropy of `logits` rows against integer class labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> Result<NodeId> {
        let (m, k) = self.value(logits).dims2()?;
        if m == 0 || labels.is_empty() {
            return Err(Error::EmptyInput("cross_entropy"));
        }
        if labels.len() != m {
            return Err(Error::Shape {
                op: "cross_entropy",
                detail: format!("{m} logit rows vs {} labels", labels.len()),
            });
        }
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(Error::InvalidLabel { label, classes: k });
            }
            let row = &self.value(logits).data()[i * k..(i + 1) * k];
            total += log_sum_exp(row) - row[label];
        }
        let loss = total / m as f64;
        let needs = self.needs(logits);
        self.push(Op::CrossEntropy(logits, labels), Tensor::scalar(loss), needs, "cross_entropy")
    }

    // ── backward, value mode ────────────────────────────────────────────

    /// Adjoints of every registered parameter of a scalar loss. Parameters
    /// the loss does not reach get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be a scalar, got shape {:?}", loss_node.value.shape()),
            });
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].needs_grad {
                continue;
            }
            self.value_vjp(id, &g, &mut adj)?;
            adj[id] = Some(g);
        }

        let mut grads = Vec::with_capacity(self.params.len());
        for &pid in &self.params {
            let slot = if pid.0 <= loss.0 { adj[pid.0].take() } else { None };
            grads.push(match slot {
                Some(g) => g,
                None => Tensor::zeros(self.nodes[pid.0].value.shape().to_vec()),
            });
        }
        Ok(GradientMap::new(grads))
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], id: NodeId, t: Tensor) -> Result<()> {
        if !self.nodes[id.0].needs_grad {
            return Ok(());
        }
        adj[id.0] = Some(match adj[id.0].take() {
            Some(existing) => existing.add(&t)?,
            None => t,
        });
        Ok(())
    }

    fn value_vjp(&self, id: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let bt = self.value(*b).transpose()?;
                    self.accumulate(adj, *a, g.matmul(&bt)?)?;
                }
                if self.needs(*b) {
                    let at = self.value(*a).transpose()?;
                    self.accumulate(adj, *b, at.matmul(g)?)?;
                }
            }
            Op::Transpose(a) => self.accumulate(adj, *a, g.transpose()?)?,
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone())?;
                self.accumulate(adj, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, g.clone())?;
                self.accumulate(adj, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(adj, *a, g.mul(self.value(*b))?)?;
                }
                if self.needs(*b) {
                    self.accumulate(adj, *b, g.mul(self.value(*a))?)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(adj, *a, g.scale(*c))?,
            Op::AddScalarConst(a) => self.accumulate(adj, *a, g.clone())?,
            Op::AddRow(a, bias) => {
                self.accumulate(adj, *a, g.clone())?;
                if self.needs(*bias) {
                    self.accumulate(adj, *bias, column_sums(g)?)?;
                }
            }
            Op::MulRow(a, cols) => {
                let (m, n) = g.dims2()?;
                if self.needs(*a) {
                    let c = self.value(*cols).data();
                    let mut data = Vec::with_capacity(m * n);
                    for i in 0..m {
                        for j in 0..n {
                            data.push(g.data()[i * n + j] * c[j]);
                        }
                    }
                    self.accumulate(adj, *a, Tensor::matrix(m, n, data)?)?;
                }
                if self.needs(*cols) {
                    self.accumulate(adj, *cols, column_sums(&g.mul(self.value(*a))?)?)?;
                }
            }
            Op::SumRows(a) => {
                let m = self.value(*a).rows()?;
                let n = g.len();
                let mut data = Vec::with_capacity(m * n);
                for _ in 0..m {
                    data.extend_from_slice(g.data());
                }
                self.accumulate(adj, *a, Tensor::matrix(m, n, data)?)?;
            }
            Op::BroadcastRows(a) => self.accumulate(adj, *a, column_sums(g)?)?,
            Op::RowSum(a) => {
                let (m, n) = self.value(*a).dims2()?;
                let mut data = Vec::with_capacity(m * n);
                for i in 0..m {
                    for _ in 0..n {
                        data.push(g.data()[i]);
                    }
                }
                self.accumulate(adj, *a, Tensor::matrix(m, n, data)?)?;
            }
            Op::BroadcastCols(a) => {
                let (m, n) = g.dims2()?;
                let mut out = Vec::with_capacity(m);
                for i in 0..m {
                    out.push(g.data()[i * n..(i + 1) * n].iter().sum());
                }
                self.accumulate(adj, *a, Tensor::vector(out))?;
            }
            Op::Relu(a) => {
                let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(adj, *a, g.mul(&mask)?)?;
            }
            Op::Tanh(a) => {
                let deriv = self.nodes[id].value.map(|y| 1.0 - y * y);
                self.accumulate(adj, *a, g.mul(&deriv)?)?;
            }
            Op::Recip(a) => {
                let deriv = self.nodes[id].value.map(|y| -y * y);
                self.accumulate(adj, *a, g.mul(&deriv)?)?;
            }
            Op::FloorAt(a, c) => {
                let mask = self.value(*a).map(|x| if x > *c { 1.0 } else { 0.0 });
                self.accumulate(adj, *a, g.mul(&mask)?)?;
            }
            Op::RowSoftmax(a) => {
                let p = &self.nodes[id].value;
                let (m, n) = p.dims2()?;
                let gp = g.mul(p)?;
                let mut data = Vec::with_capacity(m * n);
                for i in 0..m {
                    let dot: f64 = gp.data()[i * n..(i + 1) * n].iter().sum();
                    for j in 0..n {
                        data.push(p.data()[i * n + j] * (g.data()[i * n + j] - dot));
                    }
                }
                self.accumulate(adj, *a, Tensor::matrix(m, n, data)?)?;
            }
            Op::MeanAll(a) => {
                let v = self.value(*a);
                let gv = g.scalar_value()? / v.len() as f64;
                self.accumulate(adj, *a, Tensor::filled(v.shape().to_vec(), gv))?;
            }
            Op::SumAll(a) => {
                let v = self.value(*a);
                self.accumulate(adj, *a, Tensor::filled(v.shape().to_vec(), g.scalar_value()?))?;
            }
            Op::BroadcastScalar(a) => {
                self.accumulate(adj, *a, Tensor::scalar(g.data().iter().sum()))?;
            }
            Op::MulScalar(a, s) => {
                if self.needs(*a) {
                    self.accumulate(adj, *a, g.scale(self.value(*s).scalar_value()?))?;
                }
                if self.needs(*s) {
                    let dot = g.mul(self.value(*a))?.data().iter().sum();
                    self.accumulate(adj, *s, Tensor::scalar(dot))?;
                }
            }
            Op::ConcatRows(a, b) => {
                let (ra, n) = self.value(*a).dims2()?;
                let (rb, _) = self.value(*b).dims2()?;
                if self.needs(*a) {
                    let data = g.data()[..ra * n].to_vec();
                    self.accumulate(adj, *a, Tensor::matrix(ra, n, data)?)?;
                }
                if self.needs(*b) {
                    let data = g.data()[ra * n..(ra + rb) * n].to_vec();
                    self.accumulate(adj, *b, Tensor::matrix(rb, n, data)?)?;
                }
            }
            Op::SliceRows(a, start, end) => {
                let (m, n) = self.value(*a).dims2()?;
                let mut data = vec![0.0; m * n];
                data[start * n..end * n].copy_from_slice(g.data());
                self.accumulate(adj, *a, Tensor::matrix(m, n, data)?)?;
            }
            Op::PadRows(a, before) => {
                let (m, n) = self.value(*a).dims2()?;
                let data = g.data()[before * n..(before + m) * n].to_vec();
                self.accumulate(adj, *a, Tensor::matrix(m, n, data)?)?;
            }
            Op::CrossEntropy(logits, labels) => {
                let l = self.value(*logits);
                let (m, k) = l.dims2()?;
                let gv = g.scalar_value()?;
                let mut data = Vec::with_capacity(m * k);
                for (i, &label) in labels.iter().enumerate() {
                    let row = &l.data()[i * k..(i + 1) * k];
                    let p = softmax_row(row);
                    for (j, pj) in p.into_iter().enumerate() {
                        let y = if j == label { 1.0 } else { 0.0 };
                        data.push(gv * (pj - y) / m as f64);
                    }
                }
                self.accumulate(adj, *logits, Tensor::matrix(m, k, data)?)?;
            }
        }
        Ok(())
    }

    // ── backward, node mode ─────────────────────────────────────────────

    /// Adjoints of `wrt` leaves, built as graph nodes so the gradient itself
    /// stays differentiable. Unreached leaves get constant-zero nodes.
    pub fn grad_nodes(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Shape {
                op: "grad_nodes",
                detail: format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            });
        }
        let mut adj: Vec<Option<NodeId>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(self.constant_scalar(1.0));

        for id in (0..=loss.0).rev() {
            let g = match adj[id] {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].needs_grad {
                continue;
            }
            self.node_vjp(id, g, &mut adj)?;
        }

        wrt.iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.constant(Tensor::zeros(self.value(w).shape().to_vec()))),
            })
            .collect()
    }

    fn accumulate_node(&mut self, adj: &mut [Option<NodeId>], id: NodeId, g: NodeId) -> Result<()> {
        if !self.nodes[id.0].needs_grad {
            return Ok(());
        }
        adj[id.0] = Some(match adj[id.0] {
            Some(existing) => self.add(existing, g)?,
            None => g,
        });
        Ok(())
    }

    fn node_vjp(&mut self, id: usize, g: NodeId, adj: &mut [Option<NodeId>]) -> Result<()> {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    let bt = self.transpose(b)?;
                    let da = self.matmul(g, bt)?;
                    self.accumulate_node(adj, a, da)?;
                }
                if self.needs(b) {
                    let at = self.transpose(a)?;
                    let db = self.matmul(at, g)?;
                    self.accumulate_node(adj, b, db)?;
                }
            }
            Op::Transpose(a) => {
                let da = self.transpose(g)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::Add(a, b) => {
                self.accumulate_node(adj, a, g)?;
                self.accumulate_node(adj, b, g)?;
            }
            Op::Sub(a, b) => {
                self.accumulate_node(adj, a, g)?;
                if self.needs(b) {
                    let neg = self.scale(g, -1.0)?;
                    self.accumulate_node(adj, b, neg)?;
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let da = self.mul(g, b)?;
                    self.accumulate_node(adj, a, da)?;
                }
                if self.needs(b) {
                    let db = self.mul(g, a)?;
                    self.accumulate_node(adj, b, db)?;
                }
            }
            Op::Scale(a, c) => {
                let da = self.scale(g, c)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::AddScalarConst(a) => self.accumulate_node(adj, a, g)?,
            Op::AddRow(a, bias) => {
                self.accumulate_node(adj, a, g)?;
                if self.needs(bias) {
                    let db = self.sum_rows(g)?;
                    self.accumulate_node(adj, bias, db)?;
                }
            }
            Op::MulRow(a, cols) => {
                if self.needs(a) {
                    let da = self.mul_row(g, cols)?;
                    self.accumulate_node(adj, a, da)?;
                }
                if self.needs(cols) {
                    let prod = self.mul(g, a)?;
                    let dc = self.sum_rows(prod)?;
                    self.accumulate_node(adj, cols, dc)?;
                }
            }
            Op::SumRows(a) => {
                let m = self.value(a).rows()?;
                let da = self.broadcast_rows(g, m)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::BroadcastRows(a) => {
                let da = self.sum_rows(g)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::RowSum(a) => {
                let (_, n) = self.value(a).dims2()?;
                let da = self.broadcast_cols(g, n)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::BroadcastCols(a) => {
                let da = self.row_sum(g)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::Relu(a) => {
                // Mask snapshot: piecewise-constant in the primal, so a
                // constant capture is the a.e.-correct derivative.
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                let da = self.mul(g, mask)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::Tanh(a) => {
                let y = NodeId(id);
                let y2 = self.mul(y, y)?;
                let neg = self.scale(y2, -1.0)?;
                let deriv = self.add_scalar(neg, 1.0)?;
                let da = self.mul(g, deriv)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::Recip(a) => {
                let y = NodeId(id);
                let gy = self.mul(g, y)?;
                let gyy = self.mul(gy, y)?;
                let da = self.scale(gyy, -1.0)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::FloorAt(a, c) => {
                let mask = self.value(a).map(|x| if x > c { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                let da = self.mul(g, mask)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::RowSoftmax(a) => {
                let p = NodeId(id);
                let (_, n) = self.value(p).dims2()?;
                let gp = self.mul(g, p)?;
                let dots = self.row_sum(gp)?;
                let dots = self.broadcast_cols(dots, n)?;
                let centered = self.sub(g, dots)?;
                let da = self.mul(p, centered)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::MeanAll(a) => {
                let shape = self.value(a).shape().to_vec();
                let n = self.value(a).len() as f64;
                let gs = self.scale(g, 1.0 / n)?;
                let da = self.broadcast_scalar(gs, shape)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::SumAll(a) => {
                let shape = self.value(a).shape().to_vec();
                let da = self.broadcast_scalar(g, shape)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::BroadcastScalar(a) => {
                let da = self.sum_all(g)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::MulScalar(a, s) => {
                if self.needs(a) {
                    let da = self.mul_scalar(g, s)?;
                    self.accumulate_node(adj, a, da)?;
                }
                if self.needs(s) {
                    let prod = self.mul(g, a)?;
                    let ds = self.sum_all(prod)?;
                    self.accumulate_node(adj, s, ds)?;
                }
            }
            Op::ConcatRows(a, b) => {
                let ra = self.value(a).rows()?;
                let rb = self.value(b).rows()?;
                if self.needs(a) {
                    let da = self.slice_rows(g, 0, ra)?;
                    self.accumulate_node(adj, a, da)?;
                }
                if self.needs(b) {
                    let db = self.slice_rows(g, ra, ra + rb)?;
                    self.accumulate_node(adj, b, db)?;
                }
            }
            Op::SliceRows(a, start, end) => {
                let m = self.value(a).rows()?;
                let da = self.pad_rows(g, start, m - end)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::PadRows(a, before) => {
                let m = self.value(a).rows()?;
                let da = self.slice_rows(g, before, before + m)?;
                self.accumulate_node(adj, a, da)?;
            }
            Op::CrossEntropy(logits, labels) => {
                let (m, k) = self.value(logits).dims2()?;
                let mut onehot = vec![0.0; m * k];
                for (i, &label) in labels.iter().enumerate() {
                    onehot[i * k + label] = 1.0;
                }
                let onehot = self.constant(Tensor::matrix(m, k, onehot)?);
                let p = self.row_softmax(logits)?;
                let diff = self.sub(p, onehot)?;
                let scaled = self.scale(diff, 1.0 / m as f64)?;
                let da = self.mul_scalar(scaled, g)?;
                self.accumulate_node(adj, logits, da)?;
            }
        }
        Ok(())
    }
}

fn column_sums(g: &Tensor) -> Result<Tensor> {
    let (m, n) = g.dims2()?;
    let mut out = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            out[j] += g.data()[i * n + j];
        }
    }
    Ok(Tensor::vector(out))
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy as a plain value, without building a graph.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (m, k) = logits.dims2()?;
    if m == 0 || labels.is_empty() {
        return Err(Error::EmptyInput("cross_entropy_loss"));
    }
    if labels.len() != m {
        return Err(Error::Shape {
            op: "cross_entropy_loss",
            detail: format!("{m} logit rows vs {} labels", labels.len()),
        });
    }
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::InvalidLabel { label, classes: k });
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        total += log_sum_exp(row) - row[label];
    }
    Ok(total / m as f64)
}
