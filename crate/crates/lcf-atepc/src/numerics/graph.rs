//! Reverse-mode tape. A [`Graph`] records one forward computation as a flat
//! list of nodes; node creation order is a topological order, so the backward
//! pass is a single reverse sweep. Each node keeps its value, its op
//! provenance, and (after `backward`) the gradient of the loss with respect
//! to it.
//!
//! Parameter leaves are pulled out of a [`ParameterStore`] by name and cached,
//! so a batch that touches the same parameter several times accumulates
//! gradients into a single leaf.

use std::collections::HashMap;

use super::matrix::Matrix;
use super::params::ParameterStore;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    fn index(self) -> usize {
        self.0
    }
}

enum Op {
    /// Constant leaf; receives no gradient.
    Input,
    /// Trainable leaf; gradients are collected from these.
    Param,
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    /// Broadcast a 1 x d bias row over every row of `x`.
    AddBias { x: NodeId, bias: NodeId },
    Scale { x: NodeId, c: f64 },
    /// Add a constant matrix (attention masks); gradients pass through.
    AddConst { x: NodeId },
    /// Row-wise Hadamard product with a constant matrix (focus matrices).
    HadamardRows { x: NodeId, m: Matrix },
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(NodeId, NodeId),
    /// Output row i = table row ids[i]; backward scatter-adds.
    GatherRows { table: NodeId, ids: Vec<usize> },
    TakeRow { x: NodeId, row: usize },
    SumAll(NodeId),
    SumSquares(NodeId),
    /// Sum of -log softmax(logits)[target] over rows whose target is not
    /// `ignore`. The non-ignored row count is stored alongside so callers can
    /// build means.
    CrossEntropySum { logits: NodeId, targets: Vec<i64>, ignore: i64 },
}

struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: Vec<(String, NodeId)>,
    param_lookup: HashMap<String, NodeId>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), param_leaves: Vec::new(), param_lookup: HashMap::new() }
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite values produced by graph op");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, grad: None, op });
        id
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.index()].value
    }

    /// Gradient of the last `backward` target w.r.t. this node. Zero matrix
    /// if the node does not influence the target.
    pub fn grad(&self, id: NodeId) -> Matrix {
        let node = &self.nodes[id.index()];
        node.grad.clone().unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()))
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.shape(), (1, 1), "node is not a scalar");
        v.at(0, 0)
    }

    pub fn input(&mut self, m: Matrix) -> NodeId {
        self.push(m, Op::Input)
    }

    /// Leaf for a named trainable parameter; repeated calls return the same
    /// node so gradients from all uses accumulate together.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> NodeId {
        if let Some(&id) = self.param_lookup.get(name) {
            return id;
        }
        let value = store.get(name).clone();
        let id = self.push(value, Op::Param);
        self.param_leaves.push((name.to_string(), id));
        self.param_lookup.insert(name.to_string(), id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).transpose();
        self.push(value, Op::Transpose(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape mismatch");
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let (rows, cols) = self.value(x).shape();
        assert_eq!(self.value(bias).shape(), (1, cols), "bias must be 1x{cols}");
        let b = self.value(bias).row(0).to_vec();
        let mut value = self.value(x).clone();
        for r in 0..rows {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bv;
            }
        }
        self.push(value, Op::AddBias { x, bias })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let mut value = self.value(x).clone();
        value.scale_assign(c);
        self.push(value, Op::Scale { x, c })
    }

    pub fn add_const(&mut self, x: NodeId, m: &Matrix) -> NodeId {
        assert_eq!(self.value(x).shape(), m.shape(), "add_const shape mismatch");
        let mut value = self.value(x).clone();
        value.add_assign(m);
        self.push(value, Op::AddConst { x })
    }

    pub fn hadamard_rows(&mut self, x: NodeId, m: Matrix) -> NodeId {
        assert_eq!(self.value(x).shape(), m.shape(), "hadamard_rows shape mismatch");
        let value = self.value(x).hadamard(&m);
        self.push(value, Op::HadamardRows { x, m })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let mut value = src.clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.push(value, Op::SoftmaxRows(x))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ca) = self.value(a).shape();
        let (rb, cb) = self.value(b).shape();
        assert_eq!(ra, rb, "concat_cols row mismatch: {ra} vs {rb}");
        let mut value = Matrix::zeros(ra, ca + cb);
        for r in 0..ra {
            value.row_mut(r)[..ca].copy_from_slice(self.value(a).row(r));
            value.row_mut(r)[ca..].copy_from_slice(self.value(b).row(r));
        }
        self.push(value, Op::ConcatCols(a, b))
    }

    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let (rows, cols) = self.value(table).shape();
        let mut value = Matrix::zeros(ids.len(), cols);
        for (r, &id) in ids.iter().enumerate() {
            assert!(id < rows, "gather id {id} out of range {rows}");
            value.row_mut(r).copy_from_slice(self.value(table).row(id));
        }
        self.push(value, Op::GatherRows { table, ids: ids.to_vec() })
    }

    pub fn take_row(&mut self, x: NodeId, row: usize) -> NodeId {
        let (rows, cols) = self.value(x).shape();
        assert!(row < rows, "take_row {row} out of range {rows}");
        let mut value = Matrix::zeros(1, cols);
        value.row_mut(0).copy_from_slice(self.value(x).row(row));
        self.push(value, Op::TakeRow { x, row })
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumAll(x))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumSquares(x))
    }

    /// Summed cross-entropy over non-ignored rows. Returns the scalar node
    /// and the number of rows that contributed.
    pub fn cross_entropy_sum(&mut self, logits: NodeId, targets: &[i64], ignore: i64) -> (NodeId, usize) {
        let (rows, cols) = self.value(logits).shape();
        assert_eq!(targets.len(), rows, "one target per logit row");
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            assert!(
                t >= 0 && (t as usize) < cols,
                "target {t} out of range for {cols} classes"
            );
            total += row_nll(self.value(logits).row(r), t as usize);
            count += 1;
        }
        let id = self.push(
            Matrix::from_vec(1, 1, vec![total]),
            Op::CrossEntropySum { logits, targets: targets.to_vec(), ignore },
        );
        (id, count)
    }

    /// Mean cross-entropy over non-ignored rows; 0 with zero gradient when
    /// every row is ignored.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[i64], ignore: i64) -> NodeId {
        let (sum, count) = self.cross_entropy_sum(logits, targets, ignore);
        let denom = if count == 0 { 0.0 } else { 1.0 / count as f64 };
        self.scale(sum, denom)
    }

    fn grad_mut(&mut self, id: NodeId) -> &mut Matrix {
        let node = &mut self.nodes[id.index()];
        let (rows, cols) = node.value.shape();
        node.grad.get_or_insert_with(|| Matrix::zeros(rows, cols))
    }

    fn add_grad(&mut self, id: NodeId, delta: &Matrix) {
        self.grad_mut(id).add_assign(delta);
    }

    /// Backprop from a scalar node into every node that influences it.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward target must be a scalar");
        *self.grad_mut(loss) = Matrix::from_vec(1, 1, vec![1.0]);
        for index in (0..=loss.index()).rev() {
            let Some(g) = self.nodes[index].grad.clone() else { continue };
            // Compute input deltas read-only, then apply; keeps the borrow
            // checker happy without unsafe.
            let updates: Vec<(NodeId, Matrix)> = match &self.nodes[index].op {
                Op::Input | Op::Param => vec![],
                &Op::Matmul(a, b) => {
                    let da = g.matmul(&self.value(b).transpose());
                    let db = self.value(a).transpose().matmul(&g);
                    vec![(a, da), (b, db)]
                }
                &Op::Transpose(x) => vec![(x, g.transpose())],
                &Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
                &Op::AddBias { x, bias } => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, &v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    vec![(x, g.clone()), (bias, db)]
                }
                &Op::Scale { x, c } => {
                    let mut dx = g.clone();
                    dx.scale_assign(c);
                    vec![(x, dx)]
                }
                Op::AddConst { x, .. } => vec![(*x, g.clone())],
                Op::HadamardRows { x, m } => vec![(*x, g.hadamard(m))],
                &Op::Tanh(x) => {
                    let y = &self.nodes[index].value;
                    let dx = Matrix::from_vec(
                        y.rows(),
                        y.cols(),
                        y.data().iter().zip(g.data()).map(|(&y, &g)| g * (1.0 - y * y)).collect(),
                    );
                    vec![(x, dx)]
                }
                &Op::SoftmaxRows(x) => {
                    let y = &self.nodes[index].value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (d, (&yv, &gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *d = yv * (gv - dot);
                        }
                    }
                    vec![(x, dx)]
                }
                &Op::ConcatCols(a, b) => {
                    let ca = self.value(a).cols();
                    let mut da = Matrix::zeros(g.rows(), ca);
                    let mut db = Matrix::zeros(g.rows(), g.cols() - ca);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    vec![(a, da), (b, db)]
                }
                Op::GatherRows { table, ids } => {
                    let (rows, cols) = self.value(*table).shape();
                    let mut dt = Matrix::zeros(rows, cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (acc, &v) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    vec![(*table, dt)]
                }
                &Op::TakeRow { x, row } => {
                    let (rows, cols) = self.value(x).shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    dx.row_mut(row).copy_from_slice(g.row(0));
                    vec![(x, dx)]
                }
                &Op::SumAll(x) => {
                    let (rows, cols) = self.value(x).shape();
                    vec![(x, Matrix::filled(rows, cols, g.at(0, 0)))]
                }
                &Op::SumSquares(x) => {
                    let gs = g.at(0, 0);
                    vec![(x, self.value(x).map(|v| 2.0 * gs * v))]
                }
                Op::CrossEntropySum { logits, targets, ignore } => {
                    let gs = g.at(0, 0);
                    let src = self.value(*logits);
                    let mut dx = Matrix::zeros(src.rows(), src.cols());
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        let mut probs = src.row(r).to_vec();
                        softmax_in_place(&mut probs);
                        probs[t as usize] -= 1.0;
                        for (d, p) in dx.row_mut(r).iter_mut().zip(probs) {
                            *d = gs * p;
                        }
                    }
                    vec![(*logits, dx)]
                }
            };
            for (id, delta) in updates {
                self.add_grad(id, &delta);
            }
        }
    }

    /// Parameter gradients in leaf creation order.
    pub fn param_grads(&self) -> Vec<(String, Matrix)> {
        self.param_leaves.iter().map(|(name, id)| (name.clone(), self.grad(*id))).collect()
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// -log softmax(row)[target], computed with the usual max-shifted logsumexp.
fn row_nll(row: &[f64], target: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - row[target]
}
