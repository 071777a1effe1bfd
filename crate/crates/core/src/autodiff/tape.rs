use rand::Rng;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    AddRowBias(usize, usize),
    Softmax(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Dropout { input: usize, mask: Vec<f64> },
    Mse { pred: usize, target: usize },
    Transpose(usize),
    SliceCols { input: usize, start: usize },
    SliceRows { input: usize, start: usize },
    Scale(usize, f64),
    Sum(usize),
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode recording of one forward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede
/// it and [`Tape::backward`] can visit the tape once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Accumulated gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` when `v` does not require one.
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

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape {
            op,
            lhs: s.to_vec(),
            rhs: vec![0, 0],
        }),
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims(ta, "matmul")?;
        let (k2, n) = matrix_dims(tb, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |x| x * factor, Op::Scale(a.0, factor))
    }

    /// Adds bias vector `b` (length `n`) to every row of `x` (`m × n`).
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (m, n) = matrix_dims(tx, "add_row_bias")?;
        if tb.numel() != n {
            return Err(Error::shape("add_row_bias", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (v, bias) in row.iter_mut().zip(tb.data()) {
                *v += bias;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRowBias(x.0, b.0), rg))
    }

    /// Softmax over the last axis (each row of a matrix, or the whole vector).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.numel() == 0 {
            return Err(Error::shape("softmax", tx.shape(), &[1]));
        }
        if tx.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let cols = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x.0), rg))
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns).
    /// Vectors are concatenated end to end when `axis == 0`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape { op: "concat", lhs: vec![], rhs: vec![] })?;
        let first_shape = self.value(*first).shape().to_vec();
        let value = match (first_shape.len(), axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for p in parts {
                    let t = self.value(*p);
                    if t.shape().len() != 1 {
                        return Err(Error::shape("concat", &first_shape, t.shape()));
                    }
                    data.extend_from_slice(t.data());
                }
                Tensor::vector(data)
            }
            (2, 0) => {
                let cols = first_shape[1];
                let mut rows = 0;
                let mut data = Vec::new();
                for p in parts {
                    let t = self.value(*p);
                    if t.shape().len() != 2 || t.shape()[1] != cols {
                        return Err(Error::shape("concat", &first_shape, t.shape()));
                    }
                    rows += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                Tensor::matrix(rows, cols, data)?
            }
            (2, 1) => {
                let rows = first_shape[0];
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let t = self.value(*p);
                    if t.shape().len() != 2 || t.shape()[0] != rows {
                        return Err(Error::shape("concat", &first_shape, t.shape()));
                    }
                    widths.push(t.shape()[1]);
                }
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (p, &w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
                    }
                }
                Tensor::matrix(rows, total, data)?
            }
            _ => return Err(Error::shape("concat", &first_shape, &[axis])),
        };
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity when `training` is false or `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let tx = self.value(x);
        let mask: Vec<f64> = (0..tx.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout { input: x.0, mask }, rg))
    }

    /// Mean of squared differences; returns a one-element tensor.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.numel() != tt.numel() || tp.numel() == 0 {
            return Err(Error::shape("mse_loss", tp.shape(), tt.shape()));
        }
        let n = tp.numel() as f64;
        let loss = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred: pred.0,
                target: target.0,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = matrix_dims(tx, "transpose")?;
        let src = tx.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(n, m, data)?, Op::Transpose(x.0), rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = matrix_dims(tx, "slice_cols")?;
        if start + len > n {
            return Err(Error::shape("slice_cols", tx.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(m * len);
        for row in tx.data().chunks_exact(n) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols { input: x.0, start }, rg))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = matrix_dims(tx, "slice_rows")?;
        if start + len > m {
            return Err(Error::shape("slice_rows", tx.shape(), &[start, len]));
        }
        let data = tx.data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(len, n, data)?, Op::SliceRows { input: x.0, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x.0), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x.0), rg))
    }

    /// Propagates d(loss)/d(node) back through the tape, seeding `loss`
    /// with ones.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients {
                grads: (0..self.nodes.len()).map(|_| None).collect(),
            });
        }
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.numel()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| match grads.get_mut(i).and_then(Option::take) {
                Some(g) if node.requires_grad => Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let slot = grads[target].get_or_insert_with(|| vec![0.0; self.nodes[target].value.numel()]);
        f(slot);
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                self.accumulate(grads, *a, |ga| gemm(m, n, k, g, false, val(*b).data(), true, 1.0, ga));
                self.accumulate(grads, *b, |gb| gemm(k, m, n, val(*a).data(), true, g, false, 1.0, gb));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((x, gy), w) in ga.iter_mut().zip(g).zip(vb) {
                        *x += gy * w;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((x, gy), w) in gb.iter_mut().zip(g).zip(va) {
                        *x += gy * w;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |ga| {
                    for ((x, gy), s) in ga.iter_mut().zip(g).zip(y) {
                        *x += gy * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, |ga| {
                    for ((x, gy), t) in ga.iter_mut().zip(g).zip(y) {
                        *x += gy * (1.0 - t * t);
                    }
                });
            }
            Op::Relu(a) => {
                let input = val(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((x, gy), v) in ga.iter_mut().zip(g).zip(input) {
                        if *v > 0.0 {
                            *x += gy;
                        }
                    }
                });
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * factor));
            }
            Op::AddRowBias(x, b) => {
                let n = val(*b).numel();
                self.accumulate(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |gb| {
                    for row in g.chunks_exact(n) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let cols = node.value.cols();
                self.accumulate(grads, *a, |ga| {
                    for ((gx, gy), yr) in ga.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).zip(y.chunks_exact(cols)) {
                        let dot: f64 = gy.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for ((x, gyi), yi) in gx.iter_mut().zip(gy).zip(yr) {
                            *x += yi * (gyi - dot);
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).numel();
                        let piece = &g[offset..offset + len];
                        self.accumulate(grads, p, |gp| gp.iter_mut().zip(piece).for_each(|(x, y)| *x += y));
                        offset += len;
                    }
                } else {
                    let rows = node.value.shape()[0];
                    let total = node.value.shape()[1];
                    let mut col = 0;
                    for &p in parts {
                        let w = val(p).shape()[1];
                        self.accumulate(grads, p, |gp| {
                            for r in 0..rows {
                                let src = &g[r * total + col..r * total + col + w];
                                gp[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                            }
                        });
                        col += w;
                    }
                }
            }
            Op::Dropout { input, mask } => {
                self.accumulate(grads, *input, |gi| {
                    for ((x, gy), m) in gi.iter_mut().zip(g).zip(mask) {
                        *x += gy * m;
                    }
                });
            }
            Op::Mse { pred, target } => {
                let (p, t) = (val(*pred).data(), val(*target).data());
                let scale = 2.0 * g[0] / p.len() as f64;
                self.accumulate(grads, *pred, |gp| {
                    for ((x, pi), ti) in gp.iter_mut().zip(p).zip(t) {
                        *x += scale * (pi - ti);
                    }
                });
                self.accumulate(grads, *target, |gt| {
                    for ((x, pi), ti) in gt.iter_mut().zip(p).zip(t) {
                        *x -= scale * (pi - ti);
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (val(*a).shape()[0], val(*a).shape()[1]);
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::SliceCols { input, start } => {
                let n = val(*input).shape()[1];
                let len = node.value.shape()[1];
                self.accumulate(grads, *input, |gi| {
                    for (row, src) in gi.chunks_exact_mut(n).zip(g.chunks_exact(len)) {
                        row[*start..start + len].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::SliceRows { input, start } => {
                let n = val(*input).shape()[1];
                self.accumulate(grads, *input, |gi| {
                    gi[start * n..start * n + g.len()].iter_mut().zip(g).for_each(|(x, y)| *x += y);
                });
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
        }
    }
}
