use std::collections::HashMap;

use super::kernels::{self, add_into};
use super::Tensor;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a log in the
/// cross-entropy ops.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Negate,
    AddScalar(f64),
    MulScalar(f64),
    DivScalar(f64),
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Negate => "negate",
            Unary::AddScalar(_) => "add_scalar",
            Unary::MulScalar(_) => "mul_scalar",
            Unary::DivScalar(_) => "div_scalar",
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param,
    Unary(Var, Unary),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    RepeatCols(Var, usize),
    MulConst(Var, Vec<f64>),
    SoftmaxCols(Var),
    Reshape(Var),
    Transpose(Var),
    GroupedMatVec(Var, Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Embed(Var, Vec<usize>),
    NegLogPick(Var, Vec<usize>),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only operation tape. Nodes are stored in creation order, so every
/// node's inputs precede it and a single reverse sweep is a valid
/// topological backward pass.
#[derive(Default, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

/// Result of a backward sweep: the gradient of the loss with respect to
/// every leaf (inputs and parameters) that the loss depends on.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<usize, Var>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for parameter `id`, or `None` when the loss does not reach it.
    pub fn param(&self, id: usize) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&v| self.wrt(v))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant or differentiable input leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Parameter leaf. Repeated calls with the same `id` return the same node,
    /// so every use of a shared parameter accumulates into one gradient.
    pub fn param(&mut self, id: usize, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Result<Var> {
        let xv = self.value(x);
        if kind == Unary::Log {
            if let Some((index, &value)) = xv.data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    index,
                    value,
                });
            }
        }
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            Unary::Tanh => Box::new(f64::tanh),
            Unary::Sigmoid => Box::new(kernels::sigmoid),
            Unary::Exp => Box::new(f64::exp),
            Unary::Log => Box::new(f64::ln),
            Unary::Negate => Box::new(|v: f64| -v),
            Unary::AddScalar(s) => Box::new(move |v| v + s),
            Unary::MulScalar(s) => Box::new(move |v| v * s),
            Unary::DivScalar(s) => Box::new(move |v| v / s),
        };
        let data: Vec<f64> = xv.data().iter().map(|&v| f(v)).collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            if xv.is_finite() {
                return Err(Error::Domain {
                    op: kind.name(),
                    index,
                    value: xv.data()[index],
                });
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Unary(x, kind)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let data = kernels::matmul(av.data(), bv.data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err("add", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(vec![av.rows(), av.cols()], data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(vec![av.rows(), av.cols()], data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `x + b 1^T`: adds the column vector `b` to every column of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.cols() != 1 || bv.rows() != xv.rows() {
            return Err(shape_err("add_bias", xv, bv));
        }
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for (r, row) in data.chunks_mut(cols).enumerate() {
            let bias = bv.data()[r];
            row.iter_mut().for_each(|v| *v += bias);
        }
        let out = Tensor::new(vec![xv.rows(), cols], data)?;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// `a x + b`, with `b` broadcast across columns when `broadcast` is set.
    pub fn linear_combine(&mut self, a: Var, x: Var, b: Var, broadcast: bool) -> Result<Var> {
        let ax = self.matmul(a, x)?;
        if broadcast {
            self.add_bias(ax, b)
        } else {
            self.add(ax, b)
        }
    }

    /// Repeats each column `times` times: column `n * times + t` of the
    /// output is column `n` of the input.
    pub fn repeat_cols(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::contract("repeat_cols: times must be positive"));
        }
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(rows * cols * times);
        for row in xv.data().chunks(cols) {
            for &v in row {
                data.extend(std::iter::repeat_n(v, times));
            }
        }
        let out = Tensor::new(vec![rows, cols * times], data)?;
        Ok(self.push(out, Op::RepeatCols(x, times)))
    }

    /// Elementwise product with a constant (non-differentiable) tensor such
    /// as a dropout mask.
    pub fn mul_const(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if !xv.same_shape(mask) {
            return Err(shape_err("mul_const", xv, mask));
        }
        let data = xv.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
        let out = Tensor::new(vec![xv.rows(), xv.cols()], data)?;
        Ok(self.push(out, Op::MulConst(x, mask.data().to_vec())))
    }

    /// Softmax down each column, with max subtraction.
    pub fn softmax_cols(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_finite() {
            let index = xv.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::Domain {
                op: "softmax",
                index,
                value: xv.data()[index],
            });
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut data = vec![0.0; rows * cols];
        let src = xv.data();
        for c in 0..cols {
            let mut max = f64::NEG_INFINITY;
            for r in 0..rows {
                max = max.max(src[r * cols + c]);
            }
            let mut total = 0.0;
            for r in 0..rows {
                let e = (src[r * cols + c] - max).exp();
                data[r * cols + c] = e;
                total += e;
            }
            for r in 0..rows {
                data[r * cols + c] /= total;
            }
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::SoftmaxCols(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = xv.data()[r * cols + c];
            }
        }
        let out = Tensor::new(vec![cols, rows], data)?;
        Ok(self.push(out, Op::Transpose(x)))
    }

    /// Per-example matrix-vector product over grouped columns:
    /// `out[:, n] = sum_l g[:, n * group + l] * w[l, n]`.
    ///
    /// With `g` holding one `S x L` feature map per example side by side and
    /// `w` holding one attention distribution per column, this is the
    /// batched `g_I f_loc`.
    pub fn grouped_matvec(&mut self, g: Var, w: Var) -> Result<Var> {
        let (gv, wv) = (self.value(g), self.value(w));
        let group = wv.rows();
        let n = wv.cols();
        if gv.cols() != group * n {
            return Err(shape_err("grouped_matvec", gv, wv));
        }
        let rows = gv.rows();
        let gcols = gv.cols();
        let mut data = vec![0.0; rows * n];
        for s in 0..rows {
            let grow = &gv.data()[s * gcols..(s + 1) * gcols];
            for col in 0..n {
                let mut acc = 0.0;
                for l in 0..group {
                    acc += grow[col * group + l] * wv.data()[l * n + col];
                }
                data[s * n + col] = acc;
            }
        }
        let out = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(out, Op::GroupedMatVec(g, w, group)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows: no inputs"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols: no inputs"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), pv));
            }
            cols += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                let pc = pv.cols();
                data.extend_from_slice(&pv.data()[r * pc..(r + 1) * pc]);
            }
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Row lookup: column `n` of the output is row `ids[n]` of `table`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (vocab, dim) = (tv.rows(), tv.cols());
        if ids.is_empty() {
            return Err(Error::contract("embed: empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::contract(format!(
                "embed: token id {bad} out of range for vocabulary of {vocab}"
            )));
        }
        let n = ids.len();
        let mut data = vec![0.0; dim * n];
        for (col, &id) in ids.iter().enumerate() {
            for d in 0..dim {
                data[d * n + col] = tv.data()[id * dim + d];
            }
        }
        let out = Tensor::new(vec![dim, n], data)?;
        Ok(self.push(out, Op::Embed(table, ids.to_vec())))
    }

    /// `out[0, n] = -ln(max(probs[labels[n], n], LOG_EPS))`.
    pub fn neg_log_pick(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        let (classes, n) = (pv.rows(), pv.cols());
        if labels.len() != n {
            return Err(Error::Shape {
                op: "neg_log_pick",
                left: pv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::contract(format!(
                "neg_log_pick: label {bad} out of range for {classes} classes"
            )));
        }
        let data = labels
            .iter()
            .enumerate()
            .map(|(col, &y)| -pv.data()[y * n + col].max(LOG_EPS).ln())
            .collect();
        let out = Tensor::new(vec![1, n], data)?;
        Ok(self.push(out, Op::NegLogPick(probs, labels.to_vec())))
    }

    /// `-y^T log(a)` summed over columns, for one-hot `y` (one column per
    /// example).
    pub fn cross_entropy(&mut self, probs: Var, one_hot: &Tensor) -> Result<Var> {
        let labels = one_hot_labels(one_hot)?;
        if !self.value(probs).same_shape(one_hot) {
            return Err(shape_err("cross_entropy", self.value(probs), one_hot));
        }
        let picked = self.neg_log_pick(probs, &labels)?;
        self.sum(picked)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().fold(0.0, |acc, v| acc + v);
        Ok(self.push(Tensor::scalar(total), Op::Sum(x)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let is_leaf = matches!(node.op, Op::Input | Op::Param);
            if is_leaf {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Unary(x, kind) => {
                let xv = self.value(*x);
                let d: Vec<f64> = match kind {
                    Unary::Tanh => zip_map(gd, y.data(), |g, y| g * (1.0 - y * y)),
                    Unary::Sigmoid => zip_map(gd, y.data(), |g, y| g * y * (1.0 - y)),
                    Unary::Exp => zip_map(gd, y.data(), |g, y| g * y),
                    Unary::Log => zip_map(gd, xv.data(), |g, x| g / x),
                    Unary::Negate => gd.iter().map(|g| -g).collect(),
                    Unary::AddScalar(_) => gd.to_vec(),
                    Unary::MulScalar(s) => gd.iter().map(|g| g * s).collect(),
                    Unary::DivScalar(s) => gd.iter().map(|g| g / s).collect(),
                };
                self.accumulate(grads, *x, &d);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let buf = self.grad_buf(grads, *a);
                kernels::matmul_a_bt_acc(buf, gd, bv.data(), m, k, n);
                let buf = self.grad_buf(grads, *b);
                kernels::matmul_at_b_acc(buf, av.data(), gd, m, k, n);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd);
                self.accumulate(grads, *b, gd);
            }
            Op::Mul(a, b) => {
                let da = zip_map(gd, self.value(*b).data(), |g, v| g * v);
                let db = zip_map(gd, self.value(*a).data(), |g, v| g * v);
                self.accumulate(grads, *a, &da);
                self.accumulate(grads, *b, &db);
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, gd);
                let cols = g.cols();
                let db: Vec<f64> = gd.chunks(cols).map(|row| row.iter().sum()).collect();
                self.accumulate(grads, *b, &db);
            }
            Op::RepeatCols(x, times) => {
                let dx: Vec<f64> = gd.chunks(*times).map(|c| c.iter().sum()).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::MulConst(x, mask) => {
                let dx = zip_map(gd, mask, |g, m| g * m);
                self.accumulate(grads, *x, &dx);
            }
            Op::SoftmaxCols(x) => {
                let (rows, cols) = (y.rows(), y.cols());
                let yd = y.data();
                let mut dx = vec![0.0; rows * cols];
                for c in 0..cols {
                    let mut dot = 0.0;
                    for r in 0..rows {
                        dot += gd[r * cols + c] * yd[r * cols + c];
                    }
                    for r in 0..rows {
                        dx[r * cols + c] = yd[r * cols + c] * (gd[r * cols + c] - dot);
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gd),
            Op::Transpose(x) => {
                let (rows, cols) = (y.rows(), y.cols());
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dx[c * rows + r] = gd[r * cols + c];
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::GroupedMatVec(gm, w, group) => {
                let (gv, wv) = (self.value(*gm), self.value(*w));
                let (rows, n, gcols) = (gv.rows(), wv.cols(), gv.cols());
                let mut dg = vec![0.0; rows * gcols];
                let mut dw = vec![0.0; group * n];
                for s in 0..rows {
                    let grow = &gv.data()[s * gcols..(s + 1) * gcols];
                    for col in 0..n {
                        let up = gd[s * n + col];
                        for l in 0..*group {
                            dg[s * gcols + col * group + l] = up * wv.data()[l * n + col];
                            dw[l * n + col] += up * grow[col * group + l];
                        }
                    }
                }
                self.accumulate(grads, *gm, &dg);
                self.accumulate(grads, *w, &dw);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, &gd[offset..offset + len]);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, cols) = (y.rows(), y.cols());
                let mut start = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut dp = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        dp.extend_from_slice(&gd[r * cols + start..r * cols + start + pc]);
                    }
                    self.accumulate(grads, p, &dp);
                    start += pc;
                }
            }
            Op::Embed(table, ids) => {
                let dim = self.value(*table).cols();
                let n = ids.len();
                let buf = self.grad_buf(grads, *table);
                for (col, &id) in ids.iter().enumerate() {
                    for d in 0..dim {
                        buf[id * dim + d] += gd[d * n + col];
                    }
                }
            }
            Op::NegLogPick(probs, labels) => {
                let pv = self.value(*probs);
                let n = pv.cols();
                let buf = self.grad_buf(grads, *probs);
                for (col, &label) in labels.iter().enumerate() {
                    let p = pv.data()[label * n + col];
                    if p > LOG_EPS {
                        buf[label * n + col] -= gd[col] / p;
                    }
                }
            }
            Op::Sum(x) => {
                let dx = vec![gd[0]; self.value(*x).len()];
                self.accumulate(grads, *x, &dx);
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor>], var: Var) -> &'g mut [f64] {
        grads[var.0]
            .get_or_insert_with(|| Tensor::zeros(self.value(var).shape()))
            .data_mut()
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: &[f64]) {
        match &mut grads[var.0] {
            Some(t) => add_into(t.data_mut(), delta),
            slot @ None => {
                let shape = self.value(var).shape().to_vec();
                *slot = Some(Tensor::new(shape, delta.to_vec()).expect("gradient shape"));
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Row index of the single 1 in each column of a one-hot matrix.
pub(crate) fn one_hot_labels(y: &Tensor) -> Result<Vec<usize>> {
    let (rows, cols) = (y.rows(), y.cols());
    (0..cols)
        .map(|c| {
            let mut hot = None;
            for r in 0..rows {
                match y.get(r, c) {
                    v if v == 0.0 => {}
                    v if v == 1.0 && hot.is_none() => hot = Some(r),
                    _ => {
                        return Err(Error::contract(format!(
                            "cross_entropy: column {c} of the target is not one-hot"
                        )))
                    }
                }
            }
            hot.ok_or_else(|| {
                Error::contract(format!("cross_entropy: column {c} of the target is all zero"))
            })
        })
        .collect()
}
