//! Recording graph (tape) and reverse-mode gradient propagation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep. Every forward
//! operation checks its output for NaN/Inf and fails with the op name instead
//! of letting non-finite values flow downstream.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Fill value written above the diagonal by [`Graph::causal_mask`].
///
/// Finite so that the no-NaN/Inf policy holds, and large enough that
/// `exp(fill - rowmax)` underflows to exactly zero.
pub const CAUSAL_FILL: f64 = -1.0e9;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    AddRow(Var, Var),
    Gather { table: Var, ids: Vec<usize> },
    Pick { x: Var, cols: Vec<usize> },
    LogSoftmax(Var),
    Softmax(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Transpose(Var),
    CausalMask(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation. One graph per forward pass; distinct graphs share
/// nothing and may live on different threads.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient buffers produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`. `None` when `v` does not
    /// require gradients or the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient of the output with respect to `v`, zero-filled when absent.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn last_dim(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Records a constant leaf (no gradient is accumulated for it).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2().ok_or_else(|| dim_err("matmul", ta, tb))?;
        let (k2, n) = tb.dims2().ok_or_else(|| dim_err("matmul", ta, tb))?;
        if k != k2 {
            return Err(dim_err("matmul", ta, tb));
        }
        let out = kernels::matmul(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| f(*v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(name, value, op, &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map("scale", x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map("add_const", x, |v| v + c, Op::AddConst(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, kernels::sigmoid, Op::Sigmoid(x))
    }

    /// `log σ(x)`, evaluated as `-softplus(-x)` so large |x| stays finite.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("log_sigmoid", x, kernels::log_sigmoid, Op::LogSigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map("tanh", x, f64::tanh, Op::Tanh(x))
    }

    /// Adds a length-`n` bias vector to every row of an `m × n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, n) = tx.dims2().ok_or_else(|| dim_err("add_row", tx, tb))?;
        if tb.shape() != [n] {
            return Err(dim_err("add_row", tx, tb));
        }
        let b = tb.data();
        let data = tx
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, w)| v + w))
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_row", value, Op::AddRow(x, bias), &[x, bias])
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t
            .dims2()
            .ok_or_else(|| Error::domain("gather_rows", "table must be rank 2"))?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::domain("gather_rows", format!("row {id} out of range {v}")));
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        self.push(
            "gather_rows",
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Picks one column per row: `out[i] = x[i, cols[i]]`.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t
            .dims2()
            .ok_or_else(|| Error::domain("pick", "input must be rank 2"))?;
        if cols.len() != m {
            return Err(Error::Dimension {
                op: "pick",
                left: t.shape().to_vec(),
                right: vec![cols.len()],
            });
        }
        let mut data = Vec::with_capacity(m);
        for (i, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(Error::domain("pick", format!("column {c} out of range {n}")));
            }
            data.push(t.data()[i * n + c]);
        }
        let value = Tensor::vector(data);
        self.push("pick", value, Op::Pick { x, cols: cols.to_vec() }, &[x])
    }

    fn check_reducible(&self, op: &'static str, x: Var) -> Result<usize> {
        let t = self.value(x);
        if t.rank() == 0 || t.rank() > 2 {
            return Err(Error::domain(op, format!("unsupported rank {}", t.rank())));
        }
        let cols = last_dim(t);
        if cols == 0 {
            return Err(Error::domain(op, "empty reduction axis"));
        }
        Ok(cols)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let cols = self.check_reducible("log_softmax", x)?;
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), kernels::log_softmax_rows(t.data(), cols))?;
        self.push("log_softmax", value, Op::LogSoftmax(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let cols = self.check_reducible("softmax", x)?;
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), kernels::softmax_rows(t.data(), cols))?;
        self.push("softmax", value, Op::Softmax(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::domain("mean", "empty input"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Concatenates rank-1 or rank-2 tensors along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat", "no inputs"))?;
        let t0 = self.value(*first);
        let rank = t0.rank();
        let rows = if rank == 2 { t0.shape()[0] } else { 1 };
        if rank == 0 || rank > 2 {
            return Err(Error::domain("concat", format!("unsupported rank {rank}")));
        }
        let mut total_cols = 0;
        for p in parts {
            let t = self.value(*p);
            let ok = t.rank() == rank && (rank == 1 || t.shape()[0] == rows);
            if !ok {
                return Err(dim_err("concat", t0, t));
            }
            total_cols += last_dim(t);
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                let c = last_dim(t);
                data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let shape = if rank == 2 {
            vec![rows, total_cols]
        } else {
            vec![total_cols]
        };
        let value = Tensor::new(shape, data)?;
        self.push("concat", value, Op::Concat(parts.to_vec()), parts)
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t
            .dims2()
            .ok_or_else(|| Error::domain("slice_cols", "input must be rank 2"))?;
        if start >= end || end > n {
            return Err(Error::domain("slice_cols", format!("range {start}..{end} invalid for width {n}")));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&t.data()[r * n + start..r * n + end]);
        }
        let value = Tensor::new(vec![m, w], data)?;
        self.push("slice_cols", value, Op::SliceCols { x, start }, &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t
            .dims2()
            .ok_or_else(|| Error::domain("transpose", "input must be rank 2"))?;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = t.data()[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], data)?;
        self.push("transpose", value, Op::Transpose(x), &[x])
    }

    /// Replaces entries strictly above the diagonal of a square score matrix
    /// with [`CAUSAL_FILL`], so row `i` can only attend to columns `j <= i`.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t
            .dims2()
            .ok_or_else(|| Error::domain("causal_mask", "input must be rank 2"))?;
        if m != n {
            return Err(Error::Dimension {
                op: "causal_mask",
                left: vec![m],
                right: vec![n],
            });
        }
        let mut data = t.data().to_vec();
        for i in 0..m {
            for v in &mut data[i * n + i + 1..(i + 1) * n] {
                *v = CAUSAL_FILL;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        self.push("causal_mask", value, Op::CausalMask(x), &[x])
    }

    /// Reverse sweep from a scalar output. Returns gradients for every node
    /// that requires them; leaves recorded as constants get none.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.len() != 1 || out.value.rank() > 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if out.requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2().expect("rank 2");
                let (_, n) = tb.dims2().expect("rank 2");
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, kernels::matmul_nt(g, tb.data(), m, n, k));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, kernels::matmul_tn(ta.data(), g, m, k, n));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.iter().zip(tb).map(|(g, b)| g * b).collect());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.iter().zip(ta).map(|(g, a)| g * a).collect());
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.iter().map(|v| v * s).collect()),
            Op::AddConst(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.requires_grad(*b) {
                    let n = self.value(*b).len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Gather { table, ids } => {
                if self.requires_grad(*table) {
                    let t = self.value(*table);
                    let (_, d) = t.dims2().expect("rank 2");
                    let mut gt = vec![0.0; t.len()];
                    for (i, &id) in ids.iter().enumerate() {
                        for (acc, v) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[i * d..(i + 1) * d]) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *table, gt);
                }
            }
            Op::Pick { x, cols } => {
                let t = self.value(*x);
                let (_, n) = t.dims2().expect("rank 2");
                let mut gx = vec![0.0; t.len()];
                for (i, &c) in cols.iter().enumerate() {
                    gx[i * n + c] += g[i];
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LogSoftmax(x) => {
                let cols = last_dim(&node.value);
                let mut gx = Vec::with_capacity(y.len());
                for (yrow, grow) in y.chunks(cols).zip(g.chunks(cols)) {
                    let gsum: f64 = grow.iter().sum();
                    gx.extend(yrow.iter().zip(grow).map(|(yv, gv)| gv - yv.exp() * gsum));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let cols = last_dim(&node.value);
                let mut gx = Vec::with_capacity(y.len());
                for (yrow, grow) in y.chunks(cols).zip(g.chunks(cols)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    gx.extend(yrow.iter().zip(grow).map(|(yv, gv)| yv * (gv - dot)));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, y.iter().zip(g).map(|(s, gv)| gv * s * (1.0 - s)).collect());
            }
            Op::LogSigmoid(x) => {
                let xs = self.value(*x).data();
                // d/dx log σ(x) = σ(-x)
                self.accumulate(
                    grads,
                    *x,
                    xs.iter().zip(g).map(|(xv, gv)| gv * kernels::sigmoid(-xv)).collect(),
                );
            }
            Op::Tanh(x) => {
                self.accumulate(grads, *x, y.iter().zip(g).map(|(t, gv)| gv * (1.0 - t * t)).collect());
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::Concat(parts) => {
                let total = last_dim(&node.value);
                let rows = if node.value.rank() == 2 { node.value.shape()[0] } else { 1 };
                let mut offset = 0;
                for p in parts {
                    let c = last_dim(self.value(*p));
                    if self.requires_grad(*p) {
                        let mut gp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, *p, gp);
                    }
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let t = self.value(*x);
                let (m, n) = t.dims2().expect("rank 2");
                let w = last_dim(&node.value);
                let mut gx = vec![0.0; m * n];
                for r in 0..m {
                    gx[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Transpose(x) => {
                let (n, m) = node.value.dims2().expect("rank 2");
                let mut gx = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        gx[j * n + i] = g[i * m + j];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::CausalMask(x) => {
                let (m, n) = node.value.dims2().expect("rank 2");
                let mut gx = g.to_vec();
                for i in 0..m {
                    for v in &mut gx[i * n + i + 1..(i + 1) * n] {
                        *v = 0.0;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
        }
    }
}
