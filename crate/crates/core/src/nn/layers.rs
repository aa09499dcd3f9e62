//! Dense, MLP and multi-head attention layers.
//!
//! Each layer has a taped `forward` used for training and an eager `apply`
//! that evaluates the same function straight on tensors for inference.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kernel::rows_times_matrix;
use super::tape::{AutodiffError, Tape, Var};
use super::tensor::Tensor;
use super::{softplus, Bound, ParamId, ParamSet};

/// Inputs with at most this many rows skip the packed GEMM in eager evaluation.
const SMALL_ROWS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("embedding dim {dim} is not divisible by {heads} heads")]
    Heads { dim: usize, heads: usize },
    #[error("mlp needs at least one layer")]
    EmptyMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    pub fn on_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Softplus => tape.softplus(x),
        }
    }
}

/// `y = x·W + b` with `W: in×out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let w = params.add_glorot(format!("{name}.w"), inputs, outputs, rng);
        let b = params.add(format!("{name}.b"), Tensor::zeros(1, outputs));
        Self { w, b, inputs, outputs }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var, AutodiffError> {
        let h = tape.matmul(x, p.var(self.w))?;
        tape.add_row(h, p.var(self.b))
    }

    pub fn apply(&self, params: &ParamSet, x: &Tensor) -> Tensor {
        let w = params.get(self.w);
        let b = params.get(self.b).data();
        if x.rows() > SMALL_ROWS {
            let mut y = x.matmul(w);
            for row in y.data_mut().chunks_mut(b.len()) {
                for (v, bv) in row.iter_mut().zip(b) {
                    *v += bv;
                }
            }
            return y;
        }
        let mut data = Vec::with_capacity(x.rows() * self.outputs);
        for _ in 0..x.rows() {
            data.extend_from_slice(b);
        }
        rows_times_matrix(x.data(), w.data(), &mut data, self.inputs);
        Tensor::new(x.rows(), self.outputs, data)
    }
}

/// Stack of linear layers with an activation after every layer but the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes` lists the input width, hidden widths and output width.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self, LayerError> {
        if sizes.len() < 2 {
            return Err(LayerError::EmptyMlp);
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, mut x: Var) -> Result<Var, AutodiffError> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, p, x)?;
            if i < last {
                x = self.activation.on_tape(tape, x);
            }
        }
        Ok(x)
    }

    pub fn apply(&self, params: &ParamSet, x: &Tensor) -> Tensor {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(params, &h);
            if i < last {
                h = h.map(|v| self.activation.eval(v));
            }
        }
        h
    }
}

/// Scaled dot-product attention over `heads` heads with output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, LayerError> {
        if heads == 0 || dim % heads != 0 {
            return Err(LayerError::Heads { dim, heads });
        }
        Ok(Self {
            dim,
            heads,
            wq: Linear::new(params, &format!("{name}.q"), dim, dim, rng),
            wk: Linear::new(params, &format!("{name}.k"), dim, dim, rng),
            wv: Linear::new(params, &format!("{name}.v"), dim, dim, rng),
            wo: Linear::new(params, &format!("{name}.o"), dim, dim, rng),
        })
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `queries: nq×dim`, `keys_values: nk×dim` → `nq×dim`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, queries: Var, keys_values: Var) -> Result<Var, AutodiffError> {
        for v in [queries, keys_values] {
            let s = tape.value(v).shape();
            if s[1] != self.dim {
                return Err(AutodiffError::Shape { op: "attention", left: s, right: [s[0], self.dim] });
            }
        }
        let q = self.wq.forward(tape, p, queries)?;
        let k = self.wk.forward(tape, p, keys_values)?;
        let v = self.wv.forward(tape, p, keys_values)?;
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dk, dk)?;
            let kh = tape.slice_cols(k, h * dk, dk)?;
            let vh = tape.slice_cols(v, h * dk, dk)?;
            let scores = tape.matmul_t(qh, kh, false, true)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax_rows(scores);
            outs.push(tape.matmul(weights, vh)?);
        }
        let cat = tape.concat_cols(&outs)?;
        self.wo.forward(tape, p, cat)
    }

    /// Per-head attention weight matrices, `nq×nk` each.
    pub fn weights(&self, params: &ParamSet, queries: &Tensor, keys_values: &Tensor) -> Vec<Tensor> {
        let q = self.wq.apply(params, queries);
        let k = self.wk.apply(params, keys_values);
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        (0..self.heads)
            .map(|h| {
                let mut s = Tensor::from_fn(q.rows(), k.rows(), |i, j| {
                    let qi = &q.row_slice(i)[h * dk..(h + 1) * dk];
                    let kj = &k.row_slice(j)[h * dk..(h + 1) * dk];
                    qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                });
                softmax_rows_in_place(&mut s);
                s
            })
            .collect()
    }

    pub fn apply(&self, params: &ParamSet, queries: &Tensor, keys_values: &Tensor) -> Tensor {
        assert_eq!(queries.cols(), self.dim, "query width");
        assert_eq!(keys_values.cols(), self.dim, "key/value width");
        let v = self.wv.apply(params, keys_values);
        let dk = self.head_dim();
        let weights = self.weights(params, queries, keys_values);
        let mut cat = Tensor::zeros(queries.rows(), self.dim);
        for (h, w) in weights.iter().enumerate() {
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    let a = w.get(i, j);
                    let vj = &v.row_slice(j)[h * dk..(h + 1) * dk];
                    for (c, vv) in vj.iter().enumerate() {
                        let idx = i * self.dim + h * dk + c;
                        cat.data_mut()[idx] += a * vv;
                    }
                }
            }
        }
        self.wo.apply(params, &cat)
    }
}

pub(crate) fn softmax_rows_in_place(t: &mut Tensor) {
    let c = t.cols().max(1);
    for row in t.data_mut().chunks_mut(c) {
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
}
