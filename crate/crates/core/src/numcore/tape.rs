//! Reverse-mode differentiation over a linear record of operations.
//!
//! A [`Tape`] is built fresh for each forward pass. Every op appends one node
//! holding its output value; [`Tape::backward`] walks the nodes in strict reverse
//! order and stores the accumulated adjoint on every leaf.

use crate::error::{Error, Result};

use super::tensor::{self, matmul_nt, matmul_tn, norm, Tensor, LOG_EPS, NORM_EPS};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Differentiable input; receives a gradient.
    Leaf,
    /// Input treated as a constant; never receives a gradient.
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    /// n×k plus a 1×k row broadcast over every row.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowMean(Var),
    Softmax(Var),
    LogClamped(Var),
    Cosine(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Linear record of executed differentiable operations.
#[derive(Clone, Debug, Default)]
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records an input that gradients never flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient stored on `v` by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].value.grad()
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.val(a), self.val(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds the 1×k row `bias` to every row of the n×k `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::Shape(format!(
                "row broadcast needs a 1x{} bias, got {}x{}",
                av.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let mut out = av.clone();
        out.clear_grad();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.val(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.val(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.val(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Sum of every entry, as a 1×1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.val(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Mean of every entry, as a 1×1 tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.val(a);
        if v.is_empty() {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(a)))
    }

    /// Per-row sum, n×k → n×1.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.val(a);
        let data = v.row_iter().map(|r| r.iter().sum()).collect();
        let out = Tensor::new(v.rows(), 1, data).expect("row count matches");
        self.push(out, Op::RowSum(a))
    }

    /// Per-row mean, n×k → n×1.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let v = self.val(a);
        if v.cols() == 0 {
            return Err(Error::Shape("row mean over zero columns".into()));
        }
        let k = v.cols() as f64;
        let data = v.row_iter().map(|r| r.iter().sum::<f64>() / k).collect();
        let out = Tensor::new(v.rows(), 1, data).expect("row count matches");
        Ok(self.push(out, Op::RowMean(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = tensor::softmax_rows(self.val(a));
        self.push(out, Op::Softmax(a))
    }

    pub fn log_clamped(&mut self, a: Var) -> Result<Var> {
        let out = tensor::log_clamped(self.val(a))?;
        Ok(self.push(out, Op::LogClamped(a)))
    }

    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::cosine_sim_matrix(self.val(a), self.val(b))?;
        Ok(self.push(out, Op::Cosine(a, b)))
    }

    fn zip_with(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.val(a), self.val(b));
        av.same_shape(bv, what)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.rows(), av.cols(), data)
    }

    /// Back-propagates from the 1×1 `loss`, storing `dloss/dleaf` on every leaf
    /// that the loss depends on. Leaves it does not depend on get a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.val(loss).shape() != (1, 1) {
            let (r, c) = self.val(loss).shape();
            return Err(Error::Shape(format!("backward needs a 1x1 loss, got {r}x{c}")));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf | Op::Constant => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let gt = Tensor::new(node.value.rows(), node.value.cols(), g)?;
                    let da = matmul_nt(&gt, self.val(b));
                    let db = matmul_tn(self.val(a), &gt);
                    accumulate(&mut adj, a, da.data());
                    accumulate(&mut adj, b, db.data());
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, a, &g);
                    accumulate(&mut adj, b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut adj, b, &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.val(a).data(), self.val(b).data());
                    let da: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    accumulate(&mut adj, a, &da);
                    accumulate(&mut adj, b, &db);
                }
                Op::AddRow(a, bias) => {
                    let cols = node.value.cols();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks_exact(cols.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, a, &g);
                    accumulate(&mut adj, bias, &db);
                }
                Op::Scale(a, factor) => {
                    let da: Vec<f64> = g.iter().map(|v| v * factor).collect();
                    accumulate(&mut adj, a, &da);
                }
                Op::Relu(a) => {
                    let x = self.val(a).data();
                    let da: Vec<f64> = g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut adj, a, &da);
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut adj, a, &da);
                }
                Op::Sum(a) => {
                    let n = self.val(a).len();
                    accumulate(&mut adj, a, &vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.val(a).len();
                    accumulate(&mut adj, a, &vec![g[0] / n as f64; n]);
                }
                Op::RowSum(a) | Op::RowMean(a) => {
                    let (rows, cols) = self.val(a).shape();
                    let factor = match node.op {
                        Op::RowMean(_) => 1.0 / cols as f64,
                        _ => 1.0,
                    };
                    let mut da = Vec::with_capacity(rows * cols);
                    for gi in &g {
                        da.extend(std::iter::repeat_n(gi * factor, cols));
                    }
                    accumulate(&mut adj, a, &da);
                }
                Op::Softmax(a) => {
                    let s = &node.value;
                    let cols = s.cols();
                    let mut da = vec![0.0; g.len()];
                    for i in 0..s.rows() {
                        let si = s.row(i);
                        let gi = &g[i * cols..(i + 1) * cols];
                        let inner = tensor::dot(gi, si);
                        for j in 0..cols {
                            da[i * cols + j] = si[j] * (gi[j] - inner);
                        }
                    }
                    accumulate(&mut adj, a, &da);
                }
                Op::LogClamped(a) => {
                    let p = self.val(a).data();
                    let da: Vec<f64> = g
                        .iter()
                        .zip(p)
                        .map(|(g, &p)| if p > LOG_EPS { g / p } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, a, &da);
                }
                Op::Cosine(a, b) => {
                    let (da, db) = cosine_backward(self.val(a), self.val(b), &g);
                    accumulate(&mut adj, a, &da);
                    accumulate(&mut adj, b, &db);
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(adj) {
            if let Op::Leaf = node.op {
                let g = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.value.set_grad(g)?;
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Adjoints of `s_ij = <a_i, b_j> / (|a_i| |b_j| + eps)`.
///
/// The norm of a zero row has no derivative; its term is dropped.
fn cosine_backward(a: &Tensor, b: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, m, d) = (a.rows(), b.rows(), a.cols());
    let a_norms: Vec<f64> = a.row_iter().map(norm).collect();
    let b_norms: Vec<f64> = b.row_iter().map(norm).collect();
    let mut da = vec![0.0; n * d];
    let mut db = vec![0.0; m * d];
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            let gij = g[i * m + j];
            if gij == 0.0 {
                continue;
            }
            let bj = b.row(j);
            let denom = a_norms[i] * b_norms[j] + NORM_EPS;
            let num = tensor::dot(ai, bj);
            let coef = num / (denom * denom);
            let a_unit = if a_norms[i] > 0.0 { b_norms[j] / a_norms[i] } else { 0.0 };
            let b_unit = if b_norms[j] > 0.0 { a_norms[i] / b_norms[j] } else { 0.0 };
            for k in 0..d {
                da[i * d + k] += gij * (bj[k] / denom - coef * a_unit * ai[k]);
                db[j * d + k] += gij * (ai[k] / denom - coef * b_unit * bj[k]);
            }
        }
    }
    (da, db)
}
