//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation evaluates eagerly and appends a node to the tape, so the
//! tape order is a topological order of the graph. [`Tape::backward`] walks it
//! in reverse, which visits each node after all of its consumers.

use thiserror::Error;

use super::softplus;
use super::tensor::{gemm, Tensor, View};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: [usize; 2], right: [usize; 2] },
}

/// Handle to a node on a [`Tape`].
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
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SoftmaxRows(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    BroadcastRows(Var),
    MeanRows(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (l, r) = (self.value(a).shape(), self.value(b).shape());
        if l != r {
            return Err(AutodiffError::Shape { op, left: l, right: r });
        }
        Ok(())
    }

    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, AutodiffError> {
        let (va, vb) = (View::of(self.value(a), ta), View::of(self.value(b), tb));
        if va.cols != vb.rows {
            return Err(AutodiffError::Shape {
                op: "matmul",
                left: [va.rows, va.cols],
                right: [vb.rows, vb.cols],
            });
        }
        let out = self.value(a).matmul_t(self.value(b), ta, tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.matmul_t(a, b, false, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1×c` row to every row of an `n×c` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(AutodiffError::Shape { op: "add_row", left: ta.shape(), right: tr.shape() });
        }
        let mut out = ta.clone();
        let c = ta.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tr.data()[i % c];
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("div", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Div(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let c = x.cols();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if start + len > t.cols() {
            return Err(AutodiffError::Shape { op: "slice_cols", left: t.shape(), right: [start, len] });
        }
        let out = Tensor::from_fn(t.rows(), len, |r, c| t.get(r, start + c));
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(AutodiffError::Shape {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape(),
                    right: self.value(p).shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Repeats a `1×c` row `n` times.
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Result<Var, AutodiffError> {
        let t = self.value(row);
        if t.rows() != 1 {
            return Err(AutodiffError::Shape { op: "broadcast_rows", left: t.shape(), right: [n, t.cols()] });
        }
        let out = Tensor::from_fn(n, t.cols(), |_, c| t.data()[c]);
        let rg = self.rg(row);
        Ok(self.push(out, Op::BroadcastRows(row), rg))
    }

    /// Column means: `n×c → 1×c`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.rows() as f64;
        let mut out = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        out.scale_assign(1.0 / n);
        let rg = self.rg(x);
        self.push(out, Op::MeanRows(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Gradients of the scalar `loss` with respect to every node requiring them.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(a), self.value(b));
                let gv = View::of(g, false);
                let (opa, opb) = (View::of(va, ta), View::of(vb, tb));
                if self.rg(a) {
                    // d op(A) = G · op(B)^T
                    let mut d = Tensor::zeros(va.rows(), va.cols());
                    if ta {
                        gemm(1.0, opb, gv.t(), 0.0, &mut d);
                    } else {
                        gemm(1.0, gv, opb.t(), 0.0, &mut d);
                    }
                    self.accumulate(grads, a, d);
                }
                if self.rg(b) {
                    // d op(B) = op(A)^T · G
                    let mut d = Tensor::zeros(vb.rows(), vb.cols());
                    if tb {
                        gemm(1.0, gv.t(), opa, 0.0, &mut d);
                    } else {
                        gemm(1.0, opa.t(), gv, 0.0, &mut d);
                    }
                    self.accumulate(grads, b, d);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.clone());
                if self.rg(row) {
                    let mut d = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in d.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, row, d);
                }
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    self.accumulate(grads, a, g.zip_map(self.value(b), |gv, bv| gv * bv));
                }
                if self.rg(b) {
                    self.accumulate(grads, b, g.zip_map(self.value(a), |gv, av| gv * av));
                }
            }
            &Op::Div(a, b) => {
                let vb = self.value(b);
                if self.rg(a) {
                    self.accumulate(grads, a, g.zip_map(vb, |gv, bv| gv / bv));
                }
                if self.rg(b) {
                    // d(a/b)/db = -y/b
                    let t = y.zip_map(vb, |yv, bv| -yv / bv);
                    self.accumulate(grads, b, g.zip_map(&t, |gv, tv| gv * tv));
                }
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.map(|v| v * s)),
            &Op::AddScalar(a) => self.accumulate(grads, a, g.clone()),
            &Op::Relu(a) => {
                self.accumulate(grads, a, g.zip_map(y, |gv, yv| if yv > 0.0 { gv } else { 0.0 }));
            }
            &Op::Tanh(a) => self.accumulate(grads, a, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))),
            &Op::Softplus(a) => {
                let d = g.zip_map(self.value(a), |gv, xv| gv * sigmoid(xv));
                self.accumulate(grads, a, d);
            }
            &Op::Exp(a) => self.accumulate(grads, a, g.zip_map(y, |gv, yv| gv * yv)),
            &Op::Log(a) => self.accumulate(grads, a, g.zip_map(self.value(a), |gv, xv| gv / xv)),
            &Op::Square(a) => self.accumulate(grads, a, g.zip_map(self.value(a), |gv, xv| 2.0 * gv * xv)),
            &Op::SoftmaxRows(a) => {
                let c = y.cols();
                let mut d = g.clone();
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        d.set(r, k, yr[k] * (gr[k] - dot));
                    }
                }
                self.accumulate(grads, a, d);
            }
            &Op::SliceCols { x, start } => {
                let vx = self.value(x);
                let mut d = Tensor::zeros(vx.rows(), vx.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        d.set(r, start + c, g.get(r, c));
                    }
                }
                self.accumulate(grads, x, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let d = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                        self.accumulate(grads, p, d);
                    }
                    offset += w;
                }
            }
            &Op::BroadcastRows(row) => {
                let mut d = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in d.data_mut().iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, row, d);
            }
            &Op::MeanRows(x) => {
                let n = self.value(x).rows();
                let inv = 1.0 / n as f64;
                let d = Tensor::from_fn(n, g.cols(), |_, c| g.data()[c] * inv);
                self.accumulate(grads, x, d);
            }
            &Op::Sum(x) => {
                let vx = self.value(x);
                let s = g.item();
                self.accumulate(grads, x, Tensor::new(vx.rows(), vx.cols(), vec![s; vx.len()]));
            }
        }
    }
}
