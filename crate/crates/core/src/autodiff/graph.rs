//! Reverse-mode tape over dense tensors.
//!
//! Every operation is evaluated eagerly and recorded as a node. The backward
//! pass records its own arithmetic as further nodes on the same tape, so a
//! gradient is itself differentiable. Differentiating `<grad, v>` a second time
//! yields an exact Hessian-vector product.
//!
//! Nodes are appended in evaluation order, which is therefore a valid
//! topological order. All reductions run in ascending index order.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input. `trainable` leaves seed `requires_grad`.
    Leaf,
    /// `op(a) @ op(b)` with optional transposes.
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `[n,k] + [k]` broadcast over rows.
    AddRow(NodeId, NodeId),
    /// `[n,k] -> [k]`, summing over rows.
    SumRows(NodeId),
    /// `[k] -> [n,k]`.
    BroadcastRows(NodeId),
    /// `[n,k] -> [n]`, summing within each row.
    RowSum(NodeId),
    /// `[n] -> [n,k]`.
    BroadcastCols(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    /// Heaviside step `x > 0`; its derivative is zero almost everywhere.
    Step,
    Softmax(NodeId),
    LogSoftmax(NodeId),
    /// Sum of all entries, producing a scalar.
    SumAll(NodeId),
    /// Scalar broadcast to a shape.
    Expand(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The tape.
#[derive(Debug, Default)]
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// A leaf that gradients flow into.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let value = kernels::matmul(self.value(a), self.value(b), ta, tb);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul { a, b, ta, tb }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = kernels::zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = kernels::zip(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = kernels::zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = kernels::map(self.value(a), |x| x * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let value = kernels::add_row(self.value(a), self.value(row));
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let value = kernels::sum_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> NodeId {
        let value = kernels::broadcast_rows(self.value(a), rows);
        let rg = self.rg(a);
        self.push(value, Op::BroadcastRows(a), rg)
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let value = kernels::row_sum(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> NodeId {
        let value = kernels::broadcast_cols(self.value(a), cols);
        let rg = self.rg(a);
        self.push(value, Op::BroadcastCols(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = kernels::map(self.value(a), f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = kernels::map(self.value(a), |x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    fn step(&mut self, a: NodeId) -> NodeId {
        let value = kernels::map(self.value(a), |x| if x > 0.0 { 1.0 } else { 0.0 });
        self.push(value, Op::Step, false)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let value = kernels::softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let value = kernels::log_softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).values().iter().fold(0.0, |acc, v| acc + v);
        let rg = self.rg(a);
        self.push(Tensor::scalar(total), Op::SumAll(a), rg)
    }

    pub fn expand(&mut self, scalar: NodeId, shape: Vec<usize>) -> NodeId {
        let s = self.value(scalar).values()[0];
        let len = shape.iter().product();
        let value = Tensor::raw(shape.clone(), vec![s; len]);
        let rg = self.rg(scalar);
        self.push(value, Op::Expand(scalar), rg)
    }

    /// `<a, b>` as a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let p = self.mul(a, b);
        self.sum_all(p)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The returned nodes live on this tape and can be differentiated again.
    /// A `wrt` node that `output` does not depend on gets a zero constant.
    pub fn backward(&mut self, output: NodeId, wrt: &[NodeId]) -> Vec<NodeId> {
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<NodeId>> = vec![None; output.0 + 1];
        let seed = self.constant(Tensor::raw(self.shape(output).to_vec(), vec![1.0]));
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let this = NodeId(i);
            match op {
                Op::Leaf | Op::Step => {}
                Op::MatMul { a, b, ta, tb } => {
                    if self.rg(a) {
                        let da = match (ta, tb) {
                            (false, false) => self.matmul_t(g, b, false, true),
                            (false, true) => self.matmul_t(g, b, false, false),
                            (true, false) => self.matmul_t(b, g, false, true),
                            (true, true) => self.matmul_t(b, g, true, true),
                        };
                        self.accumulate(&mut grads, a, da);
                    }
                    if self.rg(b) {
                        let db = match (ta, tb) {
                            (false, false) => self.matmul_t(a, g, true, false),
                            (false, true) => self.matmul_t(g, a, true, false),
                            (true, false) => self.matmul_t(a, g, false, false),
                            (true, true) => self.matmul_t(g, a, true, true),
                        };
                        self.accumulate(&mut grads, b, db);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, g);
                    self.accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, a, g);
                    if self.rg(b) {
                        let nb = self.scale(g, -1.0);
                        self.accumulate(&mut grads, b, nb);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let da = self.mul(g, b);
                        self.accumulate(&mut grads, a, da);
                    }
                    if self.rg(b) {
                        let db = self.mul(g, a);
                        self.accumulate(&mut grads, b, db);
                    }
                }
                Op::Scale(a, f) => {
                    let da = self.scale(g, f);
                    self.accumulate(&mut grads, a, da);
                }
                Op::AddRow(a, row) => {
                    self.accumulate(&mut grads, a, g);
                    if self.rg(row) {
                        let dr = self.sum_rows(g);
                        self.accumulate(&mut grads, row, dr);
                    }
                }
                Op::SumRows(a) => {
                    let rows = self.shape(a)[0];
                    let da = self.broadcast_rows(g, rows);
                    self.accumulate(&mut grads, a, da);
                }
                Op::BroadcastRows(a) => {
                    let da = self.sum_rows(g);
                    self.accumulate(&mut grads, a, da);
                }
                Op::RowSum(a) => {
                    let cols = self.shape(a)[1];
                    let da = self.broadcast_cols(g, cols);
                    self.accumulate(&mut grads, a, da);
                }
                Op::BroadcastCols(a) => {
                    let da = self.row_sum(g);
                    self.accumulate(&mut grads, a, da);
                }
                Op::Tanh(a) => {
                    // d tanh = 1 - y^2, expressed on the tape through y itself.
                    let y2 = self.mul(this, this);
                    let gy2 = self.mul(g, y2);
                    let da = self.sub(g, gy2);
                    self.accumulate(&mut grads, a, da);
                }
                Op::Relu(a) => {
                    let mask = self.step(a);
                    let da = self.mul(g, mask);
                    self.accumulate(&mut grads, a, da);
                }
                Op::Softmax(a) => {
                    let cols = self.shape(a)[1];
                    let sg = self.mul(this, g);
                    let rs = self.row_sum(sg);
                    let bc = self.broadcast_cols(rs, cols);
                    let sbc = self.mul(this, bc);
                    let da = self.sub(sg, sbc);
                    self.accumulate(&mut grads, a, da);
                }
                Op::LogSoftmax(a) => {
                    let cols = self.shape(a)[1];
                    let s = self.softmax(a);
                    let rs = self.row_sum(g);
                    let bc = self.broadcast_cols(rs, cols);
                    let sbc = self.mul(s, bc);
                    let da = self.sub(g, sbc);
                    self.accumulate(&mut grads, a, da);
                }
                Op::SumAll(a) => {
                    let shape = self.shape(a).to_vec();
                    let da = self.expand(g, shape);
                    self.accumulate(&mut grads, a, da);
                }
                Op::Expand(a) => {
                    let da = self.sum_all(g);
                    self.accumulate(&mut grads, a, da);
                }
            }
        }

        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(self.shape(w).to_vec())),
            })
            .collect()
    }

    fn accumulate(&mut self, grads: &mut [Option<NodeId>], target: NodeId, contribution: NodeId) {
        if !self.rg(target) {
            return;
        }
        grads[target.0] = Some(match grads[target.0] {
            None => contribution,
            Some(prev) => self.add(prev, contribution),
        });
    }
}

mod kernels {
    use crate::tensor::Tensor;

    fn transposed(t: &Tensor) -> Vec<f64> {
        let (r, c) = (t.rows(), t.cols());
        let v = t.values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        out
    }

    pub fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
        let (ar, ac) = if ta { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
        let (br, bc) = if tb { (b.cols(), b.rows()) } else { (b.rows(), b.cols()) };
        assert_eq!(ac, br, "matmul inner dimensions differ");
        let at;
        let av = if ta {
            at = transposed(a);
            &at[..]
        } else {
            a.values()
        };
        let bt;
        let bv = if tb {
            bt = transposed(b);
            &bt[..]
        } else {
            b.values()
        };
        let mut out = vec![0.0; ar * bc];
        for i in 0..ar {
            let row = &mut out[i * bc..(i + 1) * bc];
            for k in 0..ac {
                let aik = av[i * ac + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[k * bc..(k + 1) * bc];
                for (o, &bkj) in row.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        Tensor::raw(vec![ar, bc], out)
    }

    pub fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(a.shape(), b.shape(), "elementwise shapes differ");
        let v = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::raw(a.shape().to_vec(), v)
    }

    pub fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::raw(a.shape().to_vec(), a.values().iter().map(|&x| f(x)).collect())
    }

    pub fn add_row(a: &Tensor, row: &Tensor) -> Tensor {
        let c = a.cols();
        assert_eq!(row.len(), c, "row broadcast length differs");
        let r = row.values();
        let v = a.values().iter().enumerate().map(|(i, &x)| x + r[i % c]).collect();
        Tensor::raw(a.shape().to_vec(), v)
    }

    pub fn sum_rows(a: &Tensor) -> Tensor {
        let (r, c) = (a.rows(), a.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(&a.values()[i * c..(i + 1) * c]) {
                *o += x;
            }
        }
        Tensor::raw(vec![c], out)
    }

    pub fn broadcast_rows(a: &Tensor, rows: usize) -> Tensor {
        let c = a.len();
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            out.extend_from_slice(a.values());
        }
        Tensor::raw(vec![rows, c], out)
    }

    pub fn row_sum(a: &Tensor) -> Tensor {
        let (r, c) = (a.rows(), a.cols());
        let out = (0..r)
            .map(|i| a.values()[i * c..(i + 1) * c].iter().fold(0.0, |s, x| s + x))
            .collect();
        Tensor::raw(vec![r], out)
    }

    pub fn broadcast_cols(a: &Tensor, cols: usize) -> Tensor {
        let r = a.len();
        let mut out = Vec::with_capacity(r * cols);
        for &x in a.values() {
            out.extend(std::iter::repeat_n(x, cols));
        }
        Tensor::raw(vec![r, cols], out)
    }

    pub fn softmax_rows(a: &Tensor) -> Tensor {
        let (r, c) = (a.rows(), a.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &a.values()[i * c..(i + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let dst = &mut out[i * c..(i + 1) * c];
            let mut total = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - max).exp();
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        Tensor::raw(vec![r, c], out)
    }

    pub fn log_softmax_rows(a: &Tensor) -> Tensor {
        let (r, c) = (a.rows(), a.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &a.values()[i * c..(i + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().fold(0.0, |s, &x| s + (x - max).exp()).ln();
            for (d, &x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *d = x - lse;
            }
        }
        Tensor::raw(vec![r, c], out)
    }
}
