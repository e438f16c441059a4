//! Reverse-mode gradient propagation over batched matrices.
//!
//! Every forward call records one node holding its value. [`Tape::backward`]
//! walks the nodes once in reverse order and accumulates gradients into the
//! [`ParamStore`] entries the loss touched.

use alloc::vec;
use alloc::vec::Vec;


use super::matrix::{affine_backward, affine_forward, relu_forward, Matrix};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

/// Floor applied to `q` before taking its logarithm in [`Tape::cross_entropy`].
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Affine {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Exp(NodeId),
    Square(NodeId),
    Clamp {
        input: NodeId,
        lo: f64,
        hi: f64,
    },
    Min(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    GatherRows {
        table: ParamId,
        indices: Vec<usize>,
    },
    StopGrad,
    LogSoftmax(NodeId),
    Pick {
        input: NodeId,
        cols: Vec<usize>,
    },
    StudentT {
        input: NodeId,
        alpha: f64,
        normalizer: f64,
    },
    CrossEntropy(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// Ordered record of the primitive operations of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        let (ar, ac) = a.shape();
        let (br, bc) = b.shape();
        let expected = ar * ac;
        return Err(Error::Dimension {
            context,
            expected,
            actual: if expected == br * bc { br } else { br * bc },
        });
    }
    Ok(())
}

fn param_matrix(store: &ParamStore, id: ParamId) -> Matrix {
    let shape = store.shape(id);
    let values = store.values(id).to_vec();
    let (rows, cols) = match shape {
        [r, c] => (*r, *c),
        _ => (1, values.len()),
    };
    Matrix::from_vec(rows, cols, values).expect("registered shape matches storage")
}

/// Pairwise Student-t kernel `(1 + ‖x_m − x_n‖²/α)^(−(α+1)/2)`.
pub fn student_t_kernel(sq_dist: f64, alpha: f64) -> f64 {
    (1.0 + sq_dist / alpha).powf(-(alpha + 1.0) / 2.0)
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A constant: no gradient is propagated into it.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, value, false)
    }

    /// The full value of a parameter entry; 2D entries keep their shape, others become a row.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), param_matrix(store, id), true)
    }

    /// `x Wᵀ + b` for `weight` of shape `[out, in]` and `bias` of shape `[out]`.
    pub fn affine(&mut self, store: &ParamStore, input: NodeId, weight: ParamId, bias: ParamId) -> Result<NodeId> {
        let wshape = store.shape(weight);
        let (out_dim, in_dim) = match wshape {
            [o, i] => (*o, *i),
            _ => {
                return Err(Error::Dimension {
                    context: "affine weight rank",
                    expected: 2,
                    actual: wshape.len(),
                })
            }
        };
        let x = &self.nodes[input.0].value;
        if x.cols() != in_dim {
            return Err(Error::Dimension {
                context: "affine input",
                expected: in_dim,
                actual: x.cols(),
            });
        }
        if store.values(bias).len() != out_dim {
            return Err(Error::Dimension {
                context: "affine bias",
                expected: out_dim,
                actual: store.values(bias).len(),
            });
        }
        let value = affine_forward(x, store.values(weight), store.values(bias), out_dim);
        Ok(self.push(Op::Affine { input, weight, bias }, value, true))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = relu_forward(&self.nodes[input.0].value);
        let rg = self.rg(input);
        self.push(Op::Relu(input), value, rg)
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape("elementwise operands", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Matrix::from_vec(va.rows(), va.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, value, rg))
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let data = va.data().iter().map(|x| f(*x)).collect();
        let value = Matrix::from_vec(va.rows(), va.cols(), data).expect("same length");
        let rg = self.rg(a);
        self.push(op, value, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Min(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.map(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Exp(a), |x| x.exp())
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Square(a), |x| x * x)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero wherever the clamp is active.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map(a, Op::Clamp { input: a, lo, hi }, |x| x.max(lo).min(hi))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v: f64 = self.nodes[a.0].value.data().iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Matrix::scalar(v), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let m = &self.nodes[a.0].value;
        let v = m.data().iter().sum::<f64>() / m.data().len() as f64;
        let rg = self.rg(a);
        self.push(Op::Mean(a), Matrix::scalar(v), rg)
    }

    /// Sum across columns, giving an `n × 1` column.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let m = &self.nodes[a.0].value;
        let data = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
        let value = Matrix::from_vec(m.rows(), 1, data).expect("one per row");
        let rg = self.rg(a);
        self.push(Op::RowSum(a), value, rg)
    }

    /// Stacks `table[indices[i]]` as row `i`. Gradients scatter back into the selected rows only.
    pub fn gather_rows(&mut self, store: &ParamStore, table: ParamId, indices: &[usize]) -> Result<NodeId> {
        let t = param_matrix(store, table);
        let mut value = Matrix::zeros(indices.len(), t.cols());
        for (r, &k) in indices.iter().enumerate() {
            if k >= t.rows() {
                return Err(Error::Index { index: k, len: t.rows() });
            }
            value.row_mut(r).copy_from_slice(t.row(k));
        }
        Ok(self.push(
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            value,
            true,
        ))
    }

    /// Identity in the forward pass; blocks every gradient in the backward pass.
    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.clone();
        self.push(Op::StopGrad, value, false)
    }

    /// Row-wise log-softmax, stabilized by subtracting the row maximum.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let m = &self.nodes[a.0].value;
        if !m.all_finite() {
            return Err(Error::Numeric("log_softmax logits"));
        }
        let mut value = m.clone();
        for r in 0..value.rows() {
            log_softmax_in_place(value.row_mut(r));
        }
        let rg = self.rg(a);
        Ok(self.push(Op::LogSoftmax(a), value, rg))
    }

    /// Selects column `cols[r]` from each row `r`, giving an `n × 1` column.
    pub fn pick(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId> {
        let m = &self.nodes[a.0].value;
        if cols.len() != m.rows() {
            return Err(Error::Dimension {
                context: "pick indices",
                expected: m.rows(),
                actual: cols.len(),
            });
        }
        let mut data = Vec::with_capacity(cols.len());
        for (r, &c) in cols.iter().enumerate() {
            if c >= m.cols() {
                return Err(Error::Index { index: c, len: m.cols() });
            }
            data.push(m.get(r, c));
        }
        let value = Matrix::from_vec(cols.len(), 1, data)?;
        let rg = self.rg(a);
        Ok(self.push(
            Op::Pick {
                input: a,
                cols: cols.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Normalized pairwise Student-t similarities between the rows of `a`.
    ///
    /// The result is `n × n` with a zero diagonal and entries summing to one
    /// over all ordered off-diagonal pairs.
    pub fn student_t(&mut self, a: NodeId, alpha: f64) -> Result<NodeId> {
        if !(alpha > 0.0) {
            return Err(Error::Config(alloc::format!("degrees of freedom must be positive, got {alpha}")));
        }
        let x = &self.nodes[a.0].value;
        let n = x.rows();
        if n < 2 {
            return Err(Error::BatchSize(n));
        }
        let mut value = Matrix::zeros(n, n);
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(u, v)| (u - v) * (u - v)).sum();
                let k = student_t_kernel(d2, alpha);
                value.set(i, j, k);
                value.set(j, i, k);
                total += 2.0 * k;
            }
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numeric("similarity normalizer"));
        }
        value.data_mut().iter_mut().for_each(|v| *v /= total);
        let rg = self.rg(a);
        Ok(self.push(
            Op::StudentT {
                input: a,
                alpha,
                normalizer: total,
            },
            value,
            rg,
        ))
    }

    /// `−Σ_{i≠j} p_ij log max(q_ij, LOG_FLOOR)`.
    pub fn cross_entropy(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        let (vp, vq) = (&self.nodes[p.0].value, &self.nodes[q.0].value);
        same_shape("cross-entropy operands", vp, vq)?;
        let n = vp.rows();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..vp.cols() {
                if i != j {
                    total -= vp.get(i, j) * vq.get(i, j).max(LOG_FLOOR).ln();
                }
            }
        }
        let rg = self.rg(p) || self.rg(q);
        Ok(self.push(Op::CrossEntropy(p, q), Matrix::scalar(total), rg))
    }

    /// Propagates `d loss / d θ` for a scalar `loss` into the gradient buffers
    /// of `store`, adding to whatever they already hold.
    ///
    /// Returns the number of nodes that received a gradient.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<usize> {
        let lv = &self.nodes[loss.0].value;
        if lv.shape() != (1, 1) {
            return Err(Error::Dimension {
                context: "backward on non-scalar",
                expected: 1,
                actual: lv.data().len(),
            });
        }
        if !lv.all_finite() {
            return Err(Error::Numeric("loss"));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            visited += 1;
            self.propagate(node, g, &mut grads, store);
        }
        Ok(visited)
    }

    fn send(&self, grads: &mut [Option<Matrix>], to: NodeId, g: Matrix) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn elementwise(&self, grads: &mut [Option<Matrix>], to: NodeId, g: &Matrix, f: impl Fn(usize, f64) -> f64) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        let data = g.data().iter().enumerate().map(|(i, gi)| f(i, *gi)).collect();
        let m = Matrix::from_vec(g.rows(), g.cols(), data).expect("same shape");
        self.send(grads, to, m);
    }

    fn propagate(&self, node: &Node, g: Matrix, grads: &mut [Option<Matrix>], store: &mut ParamStore) {
        match &node.op {
            Op::Input | Op::StopGrad => {}
            Op::Param(id) => {
                for (acc, gi) in store.grad_mut(*id).iter_mut().zip(g.data()) {
                    *acc += gi;
                }
            }
            Op::Affine { input, weight, bias } => {
                let x = &self.nodes[input.0].value;
                let want_dx = self.rg(*input);
                let (w, gw, gb) = store.affine_parts(*weight, *bias);
                let dx = affine_backward(x, w, &g, gw, gb, want_dx);
                if let Some(dx) = dx {
                    self.send(grads, *input, dx);
                }
            }
            Op::Relu(a) => {
                let out = &node.value;
                self.elementwise(grads, *a, &g, |i, gi| if out.data()[i] > 0.0 { gi } else { 0.0 });
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone());
                self.elementwise(grads, *b, &g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                self.elementwise(grads, *a, &g, |i, gi| gi * vb.data()[i]);
                self.elementwise(grads, *b, &g, |i, gi| gi * va.data()[i]);
            }
            Op::Scale(a, f) => self.elementwise(grads, *a, &g, |_, gi| gi * f),
            Op::Exp(a) => {
                let out = &node.value;
                self.elementwise(grads, *a, &g, |i, gi| gi * out.data()[i]);
            }
            Op::Square(a) => {
                let x = &self.nodes[a.0].value;
                self.elementwise(grads, *a, &g, |i, gi| 2.0 * x.data()[i] * gi);
            }
            Op::Clamp { input, lo, hi } => {
                let x = &self.nodes[input.0].value;
                self.elementwise(grads, *input, &g, |i, gi| {
                    let v = x.data()[i];
                    if v > *lo && v < *hi {
                        gi
                    } else {
                        0.0
                    }
                });
            }
            Op::Min(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                self.elementwise(grads, *a, &g, |i, gi| if va.data()[i] <= vb.data()[i] { gi } else { 0.0 });
                self.elementwise(grads, *b, &g, |i, gi| if va.data()[i] <= vb.data()[i] { 0.0 } else { gi });
            }
            Op::Sum(a) | Op::Mean(a) => {
                let x = &self.nodes[a.0].value;
                let scale = match node.op {
                    Op::Mean(_) => 1.0 / x.data().len() as f64,
                    _ => 1.0,
                };
                let gi = g.item() * scale;
                let m = Matrix::from_vec(x.rows(), x.cols(), vec![gi; x.data().len()]).expect("shape");
                self.send(grads, *a, m);
            }
            Op::RowSum(a) => {
                let x = &self.nodes[a.0].value;
                let mut m = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let gr = g.get(r, 0);
                    m.row_mut(r).iter_mut().for_each(|v| *v = gr);
                }
                self.send(grads, *a, m);
            }
            Op::GatherRows { table, indices } => {
                let cols = g.cols();
                let acc = store.grad_mut(*table);
                for (r, &k) in indices.iter().enumerate() {
                    for (dst, src) in acc[k * cols..(k + 1) * cols].iter_mut().zip(g.row(r)) {
                        *dst += src;
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let out = &node.value;
                let mut m = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    for c in 0..out.cols() {
                        m.set(r, c, g.get(r, c) - out.get(r, c).exp() * gsum);
                    }
                }
                self.send(grads, *a, m);
            }
            Op::Pick { input, cols } => {
                let x = &self.nodes[input.0].value;
                let mut m = Matrix::zeros(x.rows(), x.cols());
                for (r, &c) in cols.iter().enumerate() {
                    m.set(r, c, g.get(r, 0));
                }
                self.send(grads, *input, m);
            }
            Op::StudentT {
                input,
                alpha,
                normalizer,
            } => {
                if !self.rg(*input) {
                    return;
                }
                let x = &self.nodes[input.0].value;
                let p = &node.value;
                let n = p.rows();
                // d L / d kernel_ij = (G_ij − Σ G∘P) / Z for i ≠ j
                let mut gp_dot = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            gp_dot += g.get(i, j) * p.get(i, j);
                        }
                    }
                }
                let mut dx = Matrix::zeros(n, x.cols());
                let coef = -(alpha + 1.0) / (2.0 * alpha);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let kernel = p.get(i, j) * normalizer;
                        let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(u, v)| (u - v) * (u - v)).sum();
                        let dk_dd2 = coef * kernel / (1.0 + d2 / alpha);
                        let dl_dk = (g.get(i, j) + g.get(j, i) - 2.0 * gp_dot) / normalizer;
                        let c = 2.0 * dl_dk * dk_dd2;
                        for col in 0..x.cols() {
                            let diff = x.get(i, col) - x.get(j, col);
                            let delta = c * diff;
                            let vi = dx.get(i, col) + delta;
                            dx.set(i, col, vi);
                            let vj = dx.get(j, col) - delta;
                            dx.set(j, col, vj);
                        }
                    }
                }
                self.send(grads, *input, dx);
            }
            Op::CrossEntropy(p, q) => {
                let (vp, vq) = (&self.nodes[p.0].value, &self.nodes[q.0].value);
                let gi = g.item();
                if self.rg(*p) {
                    let mut m = Matrix::zeros(vp.rows(), vp.cols());
                    for i in 0..vp.rows() {
                        for j in 0..vp.cols() {
                            if i != j {
                                m.set(i, j, -gi * vq.get(i, j).max(LOG_FLOOR).ln());
                            }
                        }
                    }
                    self.send(grads, *p, m);
                }
                if self.rg(*q) {
                    let mut m = Matrix::zeros(vq.rows(), vq.cols());
                    for i in 0..vq.rows() {
                        for j in 0..vq.cols() {
                            let qv = vq.get(i, j);
                            if i != j && qv > LOG_FLOOR {
                                m.set(i, j, -gi * vp.get(i, j) / qv);
                            }
                        }
                    }
                    self.send(grads, *q, m);
                }
            }
        }
    }
}

/// In-place stabilized log-softmax of one row of logits.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|v| *v = *v - max - lse);
}
