use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::kernels::{self, gather_cols, matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, scatter_add_cols};
use super::value::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Silu(Var),
    Sigmoid(Var),
    DepthwiseConv1d {
        x: Var,
        kernel: Var,
    },
    MeanRows(Var),
    Sum(Var),
    Index(Var, usize),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Attention probabilities saved by one multi-head attention call.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMap<'a> {
    pub seq_len: usize,
    pub heads: usize,
    /// `heads × seq_len × seq_len`, row-major.
    pub probs: &'a [f64],
}

impl AttentionMap<'_> {
    pub fn row_sums(&self) -> impl Iterator<Item = f64> + '_ {
        self.probs.chunks(self.seq_len.max(1)).map(|r| r.iter().sum())
    }
}

/// Linear record of operations for reverse-mode differentiation.
///
/// Every op appends one node; `backward` walks the nodes in exact reverse
/// order. Leaf gradients accumulate across `backward` calls until
/// [`Tape::zero_grad`] is called.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Saved probabilities of every attention op, in recording order.
    pub fn attention_maps(&self) -> Vec<AttentionMap<'_>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Attention { heads, probs, .. } => Some(AttentionMap {
                    seq_len: n.value.shape()[0],
                    heads: *heads,
                    probs,
                }),
                _ => None,
            })
            .collect()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(Error::Rank {
                op,
                expected: "rank 2",
                shape: s.to_vec(),
            }),
        }
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rec, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, rec: Op) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, rec, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |v| v * s, Op::Scale(a, s))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.matrix("add_row", a)?;
        if self.value(row).numel() != n {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (o, &b) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += b;
            }
        }
        let value = Tensor::new([m, n], data)?;
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul", a)?;
        let (k2, n) = self.matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_nn_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `x·w + b`, with `w` stored as `in×out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix("transpose", a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new([n, m], out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Rank {
                op: "concat",
                expected: "axis within rank",
                shape: base,
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Indices `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::Dimension {
                op: "slice",
                lhs: shape,
                rhs: vec![axis, start, end],
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Slice { input: a, axis, start }, rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.matrix("softmax_rows", a)?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            kernels::softmax_in_place(row);
        }
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.matrix("log_softmax_rows", a)?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::LogSoftmaxRows(a), rg))
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(Error::EmptyInput("layer_norm"))?;
        if d == 0 || self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for c in 0..d {
                let h = (row[c] - mean) * s;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// `x·Φ(x)` with the exact Gaussian CDF (erf-based, not the tanh fit).
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * std_normal_cdf(v), Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * sigmoid(v), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Per-channel cross-correlation of `x[T×D]` with `kernel[K×D]`, zero
    /// padded so the output keeps `T` rows. `K` must be odd.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (t, d) = self.matrix("depthwise_conv1d", x)?;
        let (k, kd) = self.matrix("depthwise_conv1d", kernel)?;
        if kd != d {
            return Err(Error::Dimension {
                op: "depthwise_conv1d",
                lhs: vec![t, d],
                rhs: vec![k, kd],
            });
        }
        if k % 2 == 0 {
            return Err(Error::config(format!("depthwise kernel size must be odd, got {k}")));
        }
        let pad = k / 2;
        let (src, w) = (self.value(x).data(), self.value(kernel).data());
        let mut out = vec![0.0; t * d];
        for ti in 0..t {
            let orow = &mut out[ti * d..(ti + 1) * d];
            for j in 0..k {
                let s = ti + j;
                if s < pad || s - pad >= t {
                    continue;
                }
                let xrow = &src[(s - pad) * d..(s - pad + 1) * d];
                let wrow = &w[j * d..(j + 1) * d];
                for c in 0..d {
                    orow[c] += wrow[c] * xrow[c];
                }
            }
        }
        let rg = self.rg(&[x, kernel]);
        Ok(self.push(Tensor::new([t, d], out)?, Op::DepthwiseConv1d { x, kernel }, rg))
    }

    /// Mean over the token axis: `[N×D] → [D]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.matrix("mean_rows", a)?;
        if n == 0 {
            return Err(Error::EmptyInput("mean over zero tokens"));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; d];
        for row in src.chunks(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new([d], out)?, Op::MeanRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Picks one element (flat row-major index) as a scalar.
    pub fn index(&mut self, a: Var, flat: usize) -> Result<Var> {
        let x = self.value(a);
        let v = *x.data().get(flat).ok_or_else(|| Error::Dimension {
            op: "index",
            lhs: x.shape().to_vec(),
            rhs: vec![flat],
        })?;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(v), Op::Index(a, flat), rg))
    }

    /// Multi-head scaled dot-product attention over already projected
    /// `q`, `k`, `v` (each `N×D`). Head `i` uses channels `i·d..(i+1)·d`
    /// with `d = D / heads`; outputs are concatenated back to `N×D`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (n, dm) = self.matrix("attention", q)?;
        if heads == 0 || dm % heads != 0 {
            return Err(Error::config(format!("model dim {dm} not divisible by {heads} heads")));
        }
        let d = dm / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; n * dm];
        let mut probs = vec![0.0; heads * n * n];
        for h in 0..heads {
            let qh = gather_cols(qd, n, dm, h * d, d);
            let kh = gather_cols(kd, n, dm, h * d, d);
            let vh = gather_cols(vd, n, dm, h * d, d);
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            matmul_nt_acc(&qh, &kh, p, n, d, n);
            for row in p.chunks_mut(n.max(1)) {
                row.iter_mut().for_each(|s| *s *= scale);
                kernels::softmax_in_place(row);
            }
            let mut oh = vec![0.0; n * d];
            matmul_nn_acc(p, &vh, &mut oh, n, n, d);
            scatter_add_cols(&mut out, &oh, n, dm, h * d, d);
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(Tensor::new([n, dm], out)?, Op::Attention { q, k, v, heads, probs }, rg))
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).numel() != 1 {
            return Err(Error::Rank {
                op: "backward",
                expected: "scalar output",
                shape: self.shape(out).to_vec(),
            });
        }
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(t) => add_into(t.data_mut(), &g),
                    None => node.grad = Some(Tensor::new(node.value.shape(), g)?),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let nodes = &self.nodes;
        let wants = |v: &Var| nodes[v.0].requires_grad;
        let val = |v: &Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(v) {
                        acc(grads, *v, g.len(), |buf| add_into(buf, g));
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    acc(grads, *a, g.len(), |buf| add_into(buf, g));
                }
                if wants(b) {
                    acc(grads, *b, g.len(), |buf| {
                        buf.iter_mut().zip(g).for_each(|(o, &x)| *o -= x)
                    });
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let bv = val(b);
                    acc(grads, *a, g.len(), |buf| {
                        for ((o, &x), &w) in buf.iter_mut().zip(g).zip(bv) {
                            *o += x * w;
                        }
                    });
                }
                if wants(b) {
                    let av = val(a);
                    acc(grads, *b, g.len(), |buf| {
                        for ((o, &x), &w) in buf.iter_mut().zip(g).zip(av) {
                            *o += x * w;
                        }
                    });
                }
            }
            Op::AddRow(a, row) => {
                if wants(a) {
                    acc(grads, *a, g.len(), |buf| add_into(buf, g));
                }
                if wants(row) {
                    let n = val(row).len();
                    acc(grads, *row, n, |buf| {
                        for chunk in g.chunks(n) {
                            add_into(buf, chunk);
                        }
                    });
                }
            }
            Op::Scale(a, s) => {
                if wants(a) {
                    acc(grads, *a, g.len(), |buf| {
                        buf.iter_mut().zip(g).for_each(|(o, &x)| *o += s * x)
                    });
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                if wants(a) {
                    acc(grads, *a, m * k, |buf| matmul_nt_acc(g, val(b), buf, m, n, k));
                }
                if wants(b) {
                    acc(grads, *b, k * n, |buf| matmul_tn_acc(val(a), g, buf, m, k, n));
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    let (m, n) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                    acc(grads, *a, m * n, |buf| {
                        for r in 0..m {
                            for c in 0..n {
                                buf[r * n + c] += g[c * m + r];
                            }
                        }
                    });
                }
            }
            Op::Reshape(a) => {
                if wants(a) {
                    acc(grads, *a, g.len(), |buf| add_into(buf, g));
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let chunk = nodes[p.0].value.shape()[*axis] * inner;
                    if wants(p) {
                        acc(grads, *p, outer * chunk, |buf| {
                            for o in 0..outer {
                                let src = &g[o * row + offset..o * row + offset + chunk];
                                add_into(&mut buf[o * chunk..(o + 1) * chunk], src);
                            }
                        });
                    }
                    offset += chunk;
                }
            }
            Op::Slice { input, axis, start } => {
                if wants(input) {
                    let in_shape = nodes[input.0].value.shape();
                    let outer: usize = in_shape[..*axis].iter().product();
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let len = node.value.shape()[*axis] * inner;
                    let full = in_shape[*axis] * inner;
                    acc(grads, *input, outer * full, |buf| {
                        for o in 0..outer {
                            let dst = &mut buf[o * full + start * inner..o * full + start * inner + len];
                            add_into(dst, &g[o * len..(o + 1) * len]);
                        }
                    });
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(a) {
                    let n = node.value.shape()[1].max(1);
                    acc(grads, *a, g.len(), |buf| {
                        for ((yr, gr), br) in y.chunks(n).zip(g.chunks(n)).zip(buf.chunks_mut(n)) {
                            let s: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                            for ((o, &p), &q) in br.iter_mut().zip(yr).zip(gr) {
                                *o += p * (q - s);
                            }
                        }
                    });
                }
            }
            Op::LogSoftmaxRows(a) => {
                if wants(a) {
                    let n = node.value.shape()[1].max(1);
                    acc(grads, *a, g.len(), |buf| {
                        for ((yr, gr), br) in y.chunks(n).zip(g.chunks(n)).zip(buf.chunks_mut(n)) {
                            let s: f64 = gr.iter().sum();
                            for ((o, &l), &q) in br.iter_mut().zip(yr).zip(gr) {
                                *o += q - l.exp() * s;
                            }
                        }
                    });
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = val(gamma).len();
                let gm = val(gamma);
                if wants(gamma) {
                    acc(grads, *gamma, d, |buf| {
                        for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                            for ((o, &q), &h) in buf.iter_mut().zip(gr).zip(hr) {
                                *o += q * h;
                            }
                        }
                    });
                }
                if wants(beta) {
                    acc(grads, *beta, d, |buf| {
                        for gr in g.chunks(d) {
                            add_into(buf, gr);
                        }
                    });
                }
                if wants(x) {
                    acc(grads, *x, g.len(), |buf| {
                        let mut dh = vec![0.0; d];
                        for (r, ((gr, hr), br)) in g.chunks(d).zip(xhat.chunks(d)).zip(buf.chunks_mut(d)).enumerate() {
                            for c in 0..d {
                                dh[c] = gr[c] * gm[c];
                            }
                            let mean_dh = dh.iter().sum::<f64>() / d as f64;
                            let mean_dhh = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for c in 0..d {
                                br[c] += rstd[r] * (dh[c] - mean_dh - hr[c] * mean_dhh);
                            }
                        }
                    });
                }
            }
            Op::Gelu(a) => self.unary_grad(grads, *a, g, |x| std_normal_cdf(x) + x * std_normal_pdf(x)),
            Op::Silu(a) => self.unary_grad(grads, *a, g, |x| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }),
            Op::Sigmoid(a) => {
                if wants(a) {
                    acc(grads, *a, g.len(), |buf| {
                        for ((o, &q), &s) in buf.iter_mut().zip(g).zip(y) {
                            *o += q * s * (1.0 - s);
                        }
                    });
                }
            }
            Op::DepthwiseConv1d { x, kernel } => {
                let (t, d) = (node.value.shape()[0], node.value.shape()[1]);
                let k = nodes[kernel.0].value.shape()[0];
                let pad = k / 2;
                let (xs, ws) = (val(x), val(kernel));
                if wants(x) {
                    acc(grads, *x, t * d, |buf| {
                        for ti in 0..t {
                            for j in 0..k {
                                let s = ti + j;
                                if s < pad || s - pad >= t {
                                    continue;
                                }
                                let src = s - pad;
                                for c in 0..d {
                                    buf[src * d + c] += ws[j * d + c] * g[ti * d + c];
                                }
                            }
                        }
                    });
                }
                if wants(kernel) {
                    acc(grads, *kernel, k * d, |buf| {
                        for ti in 0..t {
                            for j in 0..k {
                                let s = ti + j;
                                if s < pad || s - pad >= t {
                                    continue;
                                }
                                let src = s - pad;
                                for c in 0..d {
                                    buf[j * d + c] += xs[src * d + c] * g[ti * d + c];
                                }
                            }
                        }
                    });
                }
            }
            Op::MeanRows(a) => {
                if wants(a) {
                    let (n, d) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                    let inv = 1.0 / n as f64;
                    acc(grads, *a, n * d, |buf| {
                        for br in buf.chunks_mut(d) {
                            for (o, &q) in br.iter_mut().zip(g) {
                                *o += q * inv;
                            }
                        }
                    });
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let n = val(a).len();
                    acc(grads, *a, n, |buf| buf.iter_mut().for_each(|o| *o += g[0]));
                }
            }
            Op::Index(a, flat) => {
                if wants(a) {
                    let n = val(a).len();
                    acc(grads, *a, n, |buf| buf[*flat] += g[0]);
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (n, dm) = (node.value.shape()[0], node.value.shape()[1]);
                let d = dm / heads;
                let scale = 1.0 / (d as f64).sqrt();
                let mut dq = vec![0.0; n * dm];
                let mut dk = vec![0.0; n * dm];
                let mut dv = vec![0.0; n * dm];
                for h in 0..*heads {
                    let p = &probs[h * n * n..(h + 1) * n * n];
                    let go = gather_cols(g, n, dm, h * d, d);
                    let qh = gather_cols(val(q), n, dm, h * d, d);
                    let kh = gather_cols(val(k), n, dm, h * d, d);
                    let vh = gather_cols(val(v), n, dm, h * d, d);
                    // dP = dO·Vᵀ, then through the row softmax.
                    let mut ds = vec![0.0; n * n];
                    matmul_nt_acc(&go, &vh, &mut ds, n, d, n);
                    for (sr, pr) in ds.chunks_mut(n.max(1)).zip(p.chunks(n.max(1))) {
                        let s: f64 = sr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        for (o, &pp) in sr.iter_mut().zip(pr) {
                            *o = pp * (*o - s) * scale;
                        }
                    }
                    let mut dvh = vec![0.0; n * d];
                    matmul_tn_acc(p, &go, &mut dvh, n, n, d);
                    let mut dqh = vec![0.0; n * d];
                    matmul_nn_acc(&ds, &kh, &mut dqh, n, n, d);
                    let mut dkh = vec![0.0; n * d];
                    matmul_tn_acc(&ds, &qh, &mut dkh, n, n, d);
                    scatter_add_cols(&mut dq, &dqh, n, dm, h * d, d);
                    scatter_add_cols(&mut dk, &dkh, n, dm, h * d, d);
                    scatter_add_cols(&mut dv, &dvh, n, dm, h * d, d);
                }
                for (var, delta) in [(q, dq), (k, dk), (v, dv)] {
                    if wants(var) {
                        acc(grads, *var, n * dm, |buf| add_into(buf, &delta));
                    }
                }
            }
        }
    }

    fn unary_grad(&self, grads: &mut [Option<Vec<f64>>], a: Var, g: &[f64], deriv: impl Fn(f64) -> f64) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let x = self.nodes[a.0].value.data();
        acc(grads, a, g.len(), |buf| {
            for ((o, &q), &xv) in buf.iter_mut().zip(g).zip(x) {
                *o += q * deriv(xv);
            }
        });
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}
