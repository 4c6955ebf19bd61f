//! Reverse-mode differentiation over a recorded list of operations.
//!
//! A [`Tape`] borrows a [`ParameterSet`], records every op together with
//! its output value, and [`Tape::backward`] walks the records in reverse
//! to produce gradients for parameters and leaf inputs.

use super::attention::{attention_backward, attention_forward, AttentionCache, AttentionShape};
use super::dropout::Dropout;
use super::kernels::{
    conv2d_backward, conv2d_forward, conv_transpose2_backward, conv_transpose2_forward, linear_backward,
    linear_forward, maxpool2_backward, maxpool2_forward, Dims,
};
use super::loss;
use super::params::{Gradients, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(usize),
    Conv2d { x: Var, w: Var, b: Var, k: usize },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    ConvT2 { x: Var, w: Var, b: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Concat(Vec<Var>),
    ConcatCols(Vec<Var>),
    Columns { x: Var, start: usize },
    Mean(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    Dropout { x: Var, mask: Vec<f32> },
    Attention { hs: Vec<Var>, w: Var, b: Var, u: Var, cache: AttentionCache },
    /// Scalar loss whose input gradient was computed in the forward pass.
    Loss { x: Var, grad: Vec<f32> },
    Kl { z: Var, m: Var, gz: Vec<f32>, gm: Vec<f32> },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    dropout: Dropout,
}

/// Output of [`Tape::backward`].
pub struct Backward {
    leaf_grads: Vec<Option<Vec<f32>>>,
    pub params: Gradients,
}

impl Backward {
    /// Gradient of a leaf input, if it influenced the root.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

fn dims3(s: &[usize]) -> Result<Dims> {
    match s {
        [c, h, w] => Ok(Dims::new(*c, *h, *w)),
        _ => Err(Error::ShapeMismatch(format!("expected C x H x W, got {s:?}"))),
    }
}

fn dims2(s: &[usize]) -> Result<(usize, usize)> {
    match s {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::ShapeMismatch(format!("expected a matrix, got {s:?}"))),
    }
}

fn add_into(dst: &mut Option<Vec<f32>>, g: &[f32]) {
    match dst {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *dst = Some(g.to_vec()),
    }
}

fn add_owned(dst: &mut Option<Vec<f32>>, g: Vec<f32>) {
    match dst {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *dst = Some(g),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self::with_dropout(params, Dropout::off())
    }

    pub fn with_dropout(params: &'p ParameterSet, dropout: Dropout) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()], dropout }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.node(v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// The parameter at `idx`; repeated calls return the same handle.
    pub fn param(&mut self, idx: usize) -> Var {
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let v = self.push(self.params.value(idx).clone(), Op::Param(idx));
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        Ok(self.param(idx))
    }

    /// Same-padded convolution of `x: C x H x W` with `w: O x C x k x k`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let d = dims3(self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != d.c || ws[2] != ws[3] || ws[2].is_multiple_of(2) {
            return Err(shape_err("conv2d weight", &ws, self.shape(x)));
        }
        let (o, k) = (ws[0], ws[2]);
        if self.shape(b) != [o] {
            return Err(shape_err("conv2d bias", self.shape(b), &[o]));
        }
        let y = conv2d_forward(self.node(x).data(), d, self.node(w).data(), self.node(b).data(), o, k);
        Ok(self.push(Tensor::new(vec![o, d.h, d.w], y)?, Op::Conv2d { x, w, b, k }))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let d = dims3(self.shape(x))?;
        if d.h % 2 != 0 || d.w % 2 != 0 {
            return Err(Error::ShapeMismatch(format!("maxpool2 needs even extents, got {}x{}", d.h, d.w)));
        }
        let (y, argmax) = maxpool2_forward(self.node(x).data(), d);
        Ok(self.push(Tensor::new(vec![d.c, d.h / 2, d.w / 2], y)?, Op::MaxPool2 { x, argmax }))
    }

    /// Stride-2 transposed convolution with `w: C x O x 2 x 2`.
    pub fn conv_t2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let d = dims3(self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[0] != d.c || ws[2] != 2 || ws[3] != 2 {
            return Err(shape_err("conv_t2 weight", &ws, self.shape(x)));
        }
        let o = ws[1];
        if self.shape(b) != [o] {
            return Err(shape_err("conv_t2 bias", self.shape(b), &[o]));
        }
        let y = conv_transpose2_forward(self.node(x).data(), d, self.node(w).data(), self.node(b).data(), o);
        Ok(self.push(Tensor::new(vec![o, 2 * d.h, 2 * d.w], y)?, Op::ConvT2 { x, w, b }))
    }

    /// `x W + b` for `x: rows x fin`, `W: fin x fout`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, fin) = dims2(self.shape(x))?;
        let (wi, fout) = dims2(self.shape(w))?;
        if wi != fin {
            return Err(shape_err("linear", self.shape(x), self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(shape_err("linear bias", self.shape(b), &[fout]));
            }
        }
        let bias = b.map(|b| self.node(b).data());
        let y = linear_forward(self.node(x).data(), rows, fin, self.node(w).data(), bias, fout);
        Ok(self.push(Tensor::new(vec![rows, fout], y)?, Op::Linear { x, w, b }))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let t = self.node(x);
        let y = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        self.push(y, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f32::tanh, Op::Tanh(x))
    }
    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        let (ta, tb) = (self.node(a), self.node(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("elementwise", ta.shape(), tb.shape()));
        }
        let y: Vec<f32> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), y)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Concatenation along the first axis (channels of a feature map,
    /// rows of a matrix).
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s[1..] != first[1..] {
                return Err(shape_err("concat", s, &first));
            }
            lead += s[0];
            data.extend_from_slice(self.node(x).data());
        }
        let mut shape = first;
        shape[0] = lead;
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(xs.to_vec())))
    }

    /// Concatenation of matrices along columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let (rows, _) = dims2(self.shape(xs[0]))?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = dims2(self.shape(x))?;
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(x), self.shape(xs[0])));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &c) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.node(x).data()[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(Tensor::new(vec![rows, total], data)?, Op::ConcatCols(xs.to_vec())))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = dims2(self.shape(x))?;
        if start + len > cols {
            return Err(Error::ShapeMismatch(format!("columns {start}..{} of {cols}", start + len)));
        }
        let src = self.node(x).data();
        let data: Vec<f32> = (0..rows).flat_map(|r| src[r * cols + start..r * cols + start + len].iter().copied()).collect();
        Ok(self.push(Tensor::new(vec![rows, len], data)?, Op::Columns { x, start }))
    }

    /// Element-wise mean of equally shaped values.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let shape = self.shape(xs[0]).to_vec();
        let mut acc = vec![0.0f32; self.node(xs[0]).len()];
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(shape_err("mean", self.shape(x), &shape));
            }
            acc.iter_mut().zip(self.node(x).data()).for_each(|(a, v)| *a += v);
        }
        let inv = 1.0 / xs.len() as f32;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(self.push(Tensor::new(shape, acc)?, Op::Mean(xs.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.node(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self.shape(x))?;
        let y = transpose(self.node(x).data(), r, c);
        Ok(self.push(Tensor::new(vec![c, r], y)?, Op::Transpose(x)))
    }

    /// Inverted dropout with the tape's mask source; identity when the
    /// tape runs without dropout.
    pub fn dropout(&mut self, x: Var, p: f32) -> Result<Var> {
        let n = self.node(x).len();
        match self.dropout.mask(n, p)? {
            None => Ok(x),
            Some(mask) => {
                let t = self.node(x);
                let y: Vec<f32> = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                let t = Tensor::new(t.shape().to_vec(), y)?;
                Ok(self.push(t, Op::Dropout { x, mask }))
            }
        }
    }

    /// Temporal attention over `hs` (each `rows x dim`). Returns the
    /// context (`rows x dim`) and the weights (`rows x T`).
    pub fn attention(&mut self, hs: &[Var], w: Var, b: Var, u: Var) -> Result<(Var, Vec<f32>)> {
        if hs.is_empty() {
            return Err(Error::InvalidArgument("attention over an empty sequence".into()));
        }
        let (rows, dim) = dims2(self.shape(hs[0]))?;
        for &h in hs {
            if self.shape(h) != [rows, dim] {
                return Err(shape_err("attention", self.shape(h), &[rows, dim]));
            }
        }
        let (wi, att_dim) = dims2(self.shape(w))?;
        if wi != dim || self.shape(b) != [att_dim] || self.shape(u) != [att_dim] {
            return Err(shape_err("attention weights", self.shape(w), &[dim, att_dim]));
        }
        let s = AttentionShape { rows, dim, att_dim };
        let slices: Vec<&[f32]> = hs.iter().map(|&h| self.node(h).data()).collect();
        let (ctx, cache) =
            attention_forward(&slices, &s, self.node(w).data(), self.node(b).data(), self.node(u).data());
        let weights = cache.weights.clone();
        let v = self.push(Tensor::new(vec![rows, dim], ctx)?, Op::Attention { hs: hs.to_vec(), w, b, u, cache });
        Ok((v, weights))
    }

    /// Summed pixel-wise cross-entropy of `logits: K x H x W` against
    /// class codes; nodata codes are skipped. Returns the scalar sum and
    /// the number of pixels that entered it.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<(Var, usize)> {
        let d = dims3(self.shape(logits))?;
        if labels.len() != d.hw() {
            return Err(Error::ShapeMismatch(format!("{} labels for {}x{}", labels.len(), d.h, d.w)));
        }
        let (sum, valid, grad) = loss::cross_entropy_sum(self.node(logits).data(), labels, d.c)?;
        Ok((self.push(Tensor::scalar(sum as f32), Op::Loss { x: logits, grad }), valid))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: &[f32]) -> Result<Var> {
        let t = self.node(x);
        if t.len() != target.len() {
            return Err(Error::ShapeMismatch(format!("mse: {} values vs {} targets", t.len(), target.len())));
        }
        let n = t.len() as f64;
        let mut sum = 0.0f64;
        let grad = t
            .data()
            .iter()
            .zip(target)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                sum += d * d;
                (2.0 * d / n) as f32
            })
            .collect();
        Ok(self.push(Tensor::scalar((sum / n) as f32), Op::Loss { x, grad }))
    }

    /// `KL(P || Q)` for one embedding `z` against centroids `m: K x d`
    /// under a Student-t kernel, with `target` as the fixed row of `P`.
    pub fn student_t_kl(&mut self, z: Var, m: Var, target: &[f64], alpha: f64) -> Result<Var> {
        let dim = self.node(z).len();
        let (k, md) = dims2(self.shape(m))?;
        if md != dim || target.len() != k {
            return Err(shape_err("student_t_kl", self.shape(z), self.shape(m)));
        }
        let zf: Vec<f64> = self.node(z).data().iter().map(|&v| f64::from(v)).collect();
        let mf: Vec<f64> = self.node(m).data().iter().map(|&v| f64::from(v)).collect();
        let (kl, gz, gm) = loss::student_t_kl(&zf, &mf, target, alpha);
        let gz = gz.into_iter().map(|v| v as f32).collect();
        let gm = gm.into_iter().map(|v| v as f32).collect();
        Ok(self.push(Tensor::scalar(kl as f32), Op::Kl { z, m, gz, gm }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.node(x).data().iter().map(|&v| f64::from(v)).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum(x))
    }

    /// Back-propagates from the scalar `root`, whose gradient is `seed`.
    pub fn backward(&self, root: Var, seed: f32) -> Result<Backward> {
        if self.node(root).len() != 1 {
            return Err(Error::ShapeMismatch(format!("backward from non-scalar {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        let mut params = Gradients::new(self.params.len());
        grads[root.0] = Some(vec![seed]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| self.nodes[v.0].value.data();
            match &self.nodes[i].op {
                Op::Leaf => grads[i] = Some(g),
                Op::Param(idx) => params.accumulate(*idx, &g),
                Op::Conv2d { x, w, b, k } => {
                    let d = dims3(self.shape(*x))?;
                    let o = self.shape(*w)[0];
                    let (gx, gw, gb) = conv2d_backward(val(*x), d, val(*w), o, *k, &g);
                    add_owned(&mut grads[x.0], gx);
                    add_owned(&mut grads[w.0], gw);
                    add_owned(&mut grads[b.0], gb);
                }
                Op::MaxPool2 { x, argmax } => {
                    add_owned(&mut grads[x.0], maxpool2_backward(&g, argmax, val(*x).len()));
                }
                Op::ConvT2 { x, w, b } => {
                    let d = dims3(self.shape(*x))?;
                    let o = self.shape(*w)[1];
                    let (gx, gw, gb) = conv_transpose2_backward(val(*x), d, val(*w), o, &g);
                    add_owned(&mut grads[x.0], gx);
                    add_owned(&mut grads[w.0], gw);
                    add_owned(&mut grads[b.0], gb);
                }
                Op::Linear { x, w, b } => {
                    let (rows, fin) = dims2(self.shape(*x))?;
                    let fout = self.shape(*w)[1];
                    let (gx, gw, gb) = linear_backward(val(*x), rows, fin, val(*w), fout, &g);
                    add_owned(&mut grads[x.0], gx);
                    add_owned(&mut grads[w.0], gw);
                    if let Some(b) = b {
                        add_owned(&mut grads[b.0], gb);
                    }
                }
                Op::Relu(x) => {
                    let y = self.nodes[i].value.data();
                    let gx = g.iter().zip(y).map(|(g, &y)| if y > 0.0 { *g } else { 0.0 }).collect();
                    add_owned(&mut grads[x.0], gx);
                }
                Op::Sigmoid(x) => {
                    let y = self.nodes[i].value.data();
                    let gx = g.iter().zip(y).map(|(g, &y)| g * y * (1.0 - y)).collect();
                    add_owned(&mut grads[x.0], gx);
                }
                Op::Tanh(x) => {
                    let y = self.nodes[i].value.data();
                    let gx = g.iter().zip(y).map(|(g, &y)| g * (1.0 - y * y)).collect();
                    add_owned(&mut grads[x.0], gx);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[a.0], &g);
                    add_owned(&mut grads[b.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = g.iter().zip(val(*b)).map(|(g, v)| g * v).collect();
                    let gb = g.iter().zip(val(*a)).map(|(g, v)| g * v).collect();
                    add_owned(&mut grads[a.0], ga);
                    add_owned(&mut grads[b.0], gb);
                }
                Op::Scale(x, s) => {
                    add_owned(&mut grads[x.0], g.iter().map(|v| v * s).collect());
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for x in xs {
                        let n = val(*x).len();
                        add_into(&mut grads[x.0], &g[off..off + n]);
                        off += n;
                    }
                }
                Op::ConcatCols(xs) => {
                    let total = self.shape(Var(i))[1];
                    let rows = self.shape(Var(i))[0];
                    let mut start = 0;
                    for x in xs {
                        let c = self.shape(*x)[1];
                        let gx = (0..rows).flat_map(|r| g[r * total + start..r * total + start + c].iter().copied()).collect();
                        add_owned(&mut grads[x.0], gx);
                        start += c;
                    }
                }
                Op::Columns { x, start } => {
                    let (rows, cols) = dims2(self.shape(*x))?;
                    let len = self.shape(Var(i))[1];
                    let mut gx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        gx[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    add_owned(&mut grads[x.0], gx);
                }
                Op::Mean(xs) => {
                    let inv = 1.0 / xs.len() as f32;
                    let gx: Vec<f32> = g.iter().map(|v| v * inv).collect();
                    for x in xs {
                        add_into(&mut grads[x.0], &gx);
                    }
                }
                Op::Reshape(x) => add_owned(&mut grads[x.0], g),
                Op::Transpose(x) => {
                    let (r, c) = dims2(self.shape(*x))?;
                    add_owned(&mut grads[x.0], transpose(&g, c, r));
                }
                Op::Dropout { x, mask } => {
                    add_owned(&mut grads[x.0], g.iter().zip(mask).map(|(g, m)| g * m).collect());
                }
                Op::Attention { hs, w, b, u, cache } => {
                    let (rows, dim) = dims2(self.shape(hs[0]))?;
                    let att_dim = self.shape(*w)[1];
                    let s = AttentionShape { rows, dim, att_dim };
                    let slices: Vec<&[f32]> = hs.iter().map(|&h| val(h)).collect();
                    let (ghs, gw, gb, gu) = attention_backward(&slices, &s, val(*w), val(*u), cache, &g);
                    for (h, gh) in hs.iter().zip(ghs) {
                        add_owned(&mut grads[h.0], gh);
                    }
                    add_owned(&mut grads[w.0], gw);
                    add_owned(&mut grads[b.0], gb);
                    add_owned(&mut grads[u.0], gu);
                }
                Op::Loss { x, grad } => {
                    add_owned(&mut grads[x.0], grad.iter().map(|v| v * g[0]).collect());
                }
                Op::Kl { z, m, gz, gm } => {
                    add_owned(&mut grads[z.0], gz.iter().map(|v| v * g[0]).collect());
                    add_owned(&mut grads[m.0], gm.iter().map(|v| v * g[0]).collect());
                }
                Op::Sum(x) => add_owned(&mut grads[x.0], vec![g[0]; val(*x).len()]),
            }
        }
        Ok(Backward { leaf_grads: grads, params })
    }
}

fn transpose(x: &[f32], r: usize, c: usize) -> Vec<f32> {
    let mut y = vec![0.0; x.len()];
    for i in 0..r {
        for j in 0..c {
            y[j * r + i] = x[i * c + j];
        }
    }
    y
}
