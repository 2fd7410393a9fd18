//! Reverse-mode differentiation over matrix-valued operations.
//!
//! The forecaster builds its forward pass on a [`Tape`]; calling
//! [`Tape::backward`] on a scalar loss node yields gradients for every node,
//! including the parameter leaves.

use super::{Activation, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How one row of an attention-weight matrix is formed from its scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowMode {
    /// Softmax over the first `keys` columns; later columns get weight 0.
    Softmax { keys: usize },
    /// Weight `1/keys` on each of the first `keys` columns (scores ignored).
    Uniform { keys: usize },
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    AttentionWeights(Var, Vec<RowMode>),
    Neighbors3(Var),
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Rows { input: Var, start: usize },
    Mse { input: Var, target: Matrix },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Row-wise attention weights from raw scores.
pub fn attention_row_weights(scores: &Matrix, modes: &[RowMode]) -> Result<Matrix> {
    if modes.len() != scores.rows() {
        return Err(Error::Shape(format!(
            "{} row modes for {} score rows",
            modes.len(),
            scores.rows()
        )));
    }
    let mut w = Matrix::zeros(scores.rows(), scores.cols());
    for (i, mode) in modes.iter().enumerate() {
        let row = scores.row(i);
        let out = w.row_mut(i);
        match *mode {
            RowMode::Softmax { keys } => {
                if keys == 0 || keys > row.len() {
                    return Err(Error::Shape(format!("softmax over {keys} keys")));
                }
                let max = row[..keys].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..keys {
                    out[j] = (row[j] - max).exp();
                    total += out[j];
                }
                for v in &mut out[..keys] {
                    *v /= total;
                }
            }
            RowMode::Uniform { keys } => {
                if keys == 0 || keys > row.len() {
                    return Err(Error::Shape(format!("uniform over {keys} keys")));
                }
                let u = 1.0 / keys as f64;
                out[..keys].iter_mut().for_each(|v| *v = u);
            }
        }
    }
    Ok(w)
}

/// Zero-padded width-3 neighborhood expansion: row `i` of the output is
/// `[x[i-1], x[i], x[i+1]]`, so a width-3 convolution becomes one matmul.
pub fn neighbors3(x: &Matrix) -> Matrix {
    let (l, c) = x.shape();
    let mut out = Matrix::zeros(l, 3 * c);
    for i in 0..l {
        let row = out.row_mut(i);
        if i > 0 {
            row[..c].copy_from_slice(x.row(i - 1));
        }
        row[c..2 * c].copy_from_slice(x.row(i));
        if i + 1 < l {
            row[2 * c..].copy_from_slice(x.row(i + 1));
        }
    }
    out
}

/// Max-pool of width 2, stride 2 along rows; an odd trailing row is pooled
/// alone. Returns the pooled matrix and the flat source index of each output.
pub fn max_pool2(x: &Matrix) -> (Matrix, Vec<usize>) {
    let (l, c) = x.shape();
    let out_rows = l.div_ceil(2);
    let mut out = Matrix::zeros(out_rows, c);
    let mut argmax = Vec::with_capacity(out_rows * c);
    for r in 0..out_rows {
        for j in 0..c {
            let a = 2 * r * c + j;
            let mut best = a;
            if 2 * r + 1 < l {
                let b = a + c;
                if x.data()[b] > x.data()[a] {
                    best = b;
                }
            }
            out[(r, j)] = x.data()[best];
            argmax.push(best);
        }
    }
    (out, argmax)
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds the `1 x cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let bias = self.value(b);
        if bias.rows() != 1 || bias.cols() != self.value(a).cols() {
            return Err(Error::Shape(format!(
                "row bias {:?} for {:?}",
                bias.shape(),
                self.value(a).shape()
            )));
        }
        let bias = bias.row(0).to_vec();
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale(factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        let v = self.value(a).map(|x| act.apply(x));
        self.push(v, Op::Act(a, act))
    }

    pub fn attention_weights(&mut self, scores: Var, modes: Vec<RowMode>) -> Result<Var> {
        let v = attention_row_weights(self.value(scores), &modes)?;
        Ok(self.push(v, Op::AttentionWeights(scores, modes)))
    }

    pub fn neighbors3(&mut self, a: Var) -> Var {
        let v = neighbors3(self.value(a));
        self.push(v, Op::Neighbors3(a))
    }

    pub fn max_pool2(&mut self, a: Var) -> Var {
        let (v, argmax) = max_pool2(self.value(a));
        self.push(v, Op::MaxPool2 { input: a, argmax })
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(a);
        if start + len > m.rows() {
            return Err(Error::Shape(format!(
                "rows {start}..{} of a {}-row matrix",
                start + len,
                m.rows()
            )));
        }
        let v = m.slice_rows(start, len);
        Ok(self.push(v, Op::Rows { input: a, start }))
    }

    /// Mean squared error against a constant target, as a `1 x 1` node.
    pub fn mse(&mut self, a: Var, target: Matrix) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "prediction {:?} vs target {:?}",
                x.shape(),
                target.shape()
            )));
        }
        let n = x.data().len().max(1) as f64;
        let loss = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(Matrix::filled(1, 1, loss), Op::Mse { input: a, target }))
    }

    /// Gradients of the scalar `loss` node with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<TapeGrads> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b))?;
                    let db = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.t_matmul(self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut grads, *b, g.column_sums())?;
                    accumulate(&mut grads, *a, g.clone())?;
                }
                Op::Scale(a, f) => {
                    let mut da = g.clone();
                    da.scale(*f);
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Act(a, act) => {
                    let x = self.value(*a);
                    let mut da = g.clone();
                    for ((d, &xv), &yv) in da.data_mut().iter_mut().zip(x.data()).zip(node.value.data()) {
                        *d *= act.derivative(xv, yv);
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::AttentionWeights(scores, modes) => {
                    let w = &node.value;
                    let mut ds = Matrix::zeros(w.rows(), w.cols());
                    for (i, mode) in modes.iter().enumerate() {
                        if let RowMode::Softmax { keys } = *mode {
                            let wr = &w.row(i)[..keys];
                            let gr = &g.row(i)[..keys];
                            let dot: f64 = wr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for (j, d) in ds.row_mut(i)[..keys].iter_mut().enumerate() {
                                *d = wr[j] * (gr[j] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *scores, ds)?;
                }
                Op::Neighbors3(a) => {
                    let (l, c) = self.value(*a).shape();
                    let mut da = Matrix::zeros(l, c);
                    for i in 0..l {
                        let gr = g.row(i);
                        if i > 0 {
                            add_into(da.row_mut(i - 1), &gr[..c]);
                        }
                        add_into(da.row_mut(i), &gr[c..2 * c]);
                        if i + 1 < l {
                            add_into(da.row_mut(i + 1), &gr[2 * c..]);
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                }
                Op::MaxPool2 { input, argmax } => {
                    let (l, c) = self.value(*input).shape();
                    let mut da = Matrix::zeros(l, c);
                    for (e, &src) in argmax.iter().enumerate() {
                        da.data_mut()[src] += g.data()[e];
                    }
                    accumulate(&mut grads, *input, da)?;
                }
                Op::Rows { input, start } => {
                    let (l, c) = self.value(*input).shape();
                    let mut da = Matrix::zeros(l, c);
                    for r in 0..g.rows() {
                        da.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *input, da)?;
                }
                Op::Mse { input, target } => {
                    let x = self.value(*input);
                    let n = x.data().len().max(1) as f64;
                    let scale = g.data()[0] * 2.0 / n;
                    let da = Matrix::from_vec(
                        x.rows(),
                        x.cols(),
                        x.data()
                            .iter()
                            .zip(target.data())
                            .map(|(p, t)| scale * (p - t))
                            .collect(),
                    )?;
                    accumulate(&mut grads, *input, da)?;
                }
            }
            grads[idx] = Some(g);
        }
        Ok(TapeGrads { grads })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub struct TapeGrads {
    grads: Vec<Option<Matrix>>,
}

impl TapeGrads {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}
