//! Define-by-run reverse-mode graph.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep is a single reverse pass that
//! touches every node once.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::math;
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Elu(Var),
    Square(Var),
    ClampMin(Var, f32),
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: usize,
        pad_top: usize,
        pad_left: usize,
    },
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Sum(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    RepeatFirst(Var),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// A computation graph rebuilt for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not
    /// influence the loss (or does not require gradients).
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    /// Like [`get`](Self::get) but unreachable nodes yield zeros.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().unwrap_or(&1)
}

/// Output size and leading padding of a "same"-padded convolution axis.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

/// Dot product over eight independent partial sums so the loop vectorizes.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, op_name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = match &op {
            Op::Leaf => value.requires_grad(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Elu(a)
            | Op::Square(a)
            | Op::ClampMin(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::LogSumExp(a)
            | Op::Sum(a)
            | Op::Reshape(a)
            | Op::RepeatFirst(a) => self.needs(*a),
            Op::Slice { src, .. } => self.needs(*src),
            Op::Dense { x, w, b } => self.needs(*x) || self.needs(*w) || self.needs(*b),
            Op::Conv2d { x, k, b, .. } => {
                self.needs(*x) || self.needs(*k) || b.is_some_and(|b| self.needs(b))
            }
            Op::Concat { parts, .. } => parts.iter().any(|p| self.needs(*p)),
        };
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t.with_requires_grad(false), Op::Leaf, "constant")
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push(t.with_requires_grad(true), Op::Leaf, "leaf")
    }

    /// Leaf sharing an existing tensor without copying its data.
    pub fn shared_leaf(&mut self, t: Arc<Tensor>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(
        &mut self,
        a: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f32) -> f32,
    ) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect());
        self.push(out, op, name)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(name, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |p, q| p * q)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", Op::Div(a, b), |p, q| p / q)
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var> {
        self.unary(a, "scale", Op::Scale(a, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Result<Var> {
        self.unary(a, "add_scalar", Op::AddScalar(a), |v| v + c)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", Op::Exp(a), math::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "log", Op::Log(a), math::ln)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", Op::Tanh(a), math::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", Op::Sigmoid(a), math::sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", Op::Relu(a), |v| v.max(0.0))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "elu", Op::Elu(a), |v| if v > 0.0 { v } else { math::exp(v) - 1.0 })
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", Op::Square(a), |v| v * v)
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f32) -> Result<Var> {
        self.unary(a, "clamp_min", Op::ClampMin(a, floor), |v| v.max(floor))
    }

    /// Affine map `x[B,I] · w[I,O] + b[O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || wv.rank() != 2 || xv.shape()[1] != wv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: xv.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        let (rows, inp, out) = (xv.shape()[0], wv.shape()[0], wv.shape()[1]);
        if bv.shape() != [out] {
            return Err(Error::ShapeMismatch {
                op: "dense bias",
                left: wv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut res = vec![0.0f32; rows * out];
        for r in 0..rows {
            let o_row = &mut res[r * out..(r + 1) * out];
            o_row.copy_from_slice(bd);
            for i in 0..inp {
                let xi = xd[r * inp + i];
                if xi == 0.0 {
                    continue;
                }
                let w_row = &wd[i * out..(i + 1) * out];
                o_row.iter_mut().zip(w_row).for_each(|(o, &wv)| *o += xi * wv);
            }
        }
        let t = Tensor::from_parts(vec![rows, out], res);
        self.push(t, Op::Dense { x, w, b }, "dense")
    }

    /// 2-D convolution over NCHW input with "same" zero padding.
    /// Kernels are `[K, C, KH, KW]`; optional bias is `[K]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(k));
        if xv.rank() != 4 || kv.rank() != 4 || xv.shape()[1] != kv.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: xv.shape().to_vec(),
                right: kv.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let [n, c, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
        let [kn, _, kh, kw] = [kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[3]];
        if let Some(b) = b {
            if self.value(b).shape() != [kn] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: kv.shape().to_vec(),
                    right: self.value(b).shape().to_vec(),
                });
            }
        }
        let (oh, pt) = same_padding(h, kh, stride);
        let (ow, pl) = same_padding(w, kw, stride);
        let geo = ConvGeometry { n, c, h, w, kn, kh, kw, oh, ow, pt, pl, stride };
        let mut out = vec![0.0f32; n * kn * oh * ow];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (plane, chunk) in out.chunks_mut(oh * ow).enumerate() {
                chunk.fill(bd[plane % kn]);
            }
        }
        geo.for_each_tap(|o_idx, i_idx, k_idx, len| {
            let (xd, kd) = (xv.data(), kv.data());
            let wv = kd[k_idx];
            let dst = &mut out[o_idx..o_idx + len];
            if stride == 1 {
                dst.iter_mut()
                    .zip(&xd[i_idx..i_idx + len])
                    .for_each(|(o, &xi)| *o += wv * xi);
            } else {
                for (j, o) in dst.iter_mut().enumerate() {
                    *o += wv * xd[i_idx + j * stride];
                }
            }
        });
        let t = Tensor::from_parts(vec![n, kn, oh, ow], out);
        self.push(
            t,
            Op::Conv2d { x, k, b, stride, pad_top: pt, pad_left: pl },
            "conv2d",
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let cols = last_dim(x);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let t = Tensor::from_parts(x.shape().to_vec(), out);
        self.push(t, Op::Softmax(a), "softmax")
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let cols = last_dim(x);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(cols) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let t = Tensor::from_parts(x.shape().to_vec(), out);
        self.push(t, Op::LogSoftmax(a), "log_softmax")
    }

    /// Log-sum-exp over the last axis; the last axis collapses to size 1.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let cols = last_dim(x);
        let out: Vec<f32> = x.data().chunks(cols).map(log_sum_exp).collect();
        let mut shape = x.shape().to_vec();
        if let Some(l) = shape.last_mut() {
            *l = 1;
        } else {
            shape.push(1);
        }
        let t = Tensor::from_parts(shape, out);
        self.push(t, Op::LogSumExp(a), "log_sum_exp")
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f32 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f32;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?);
        let base = first.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat axis out of range"));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::from_parts(shape, out);
        self.push(t, Op::Concat { parts: parts.to_vec(), axis }, "concat")
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let shape = x.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid("slice out of range"));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let span = shape[axis] * inner;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * span + start * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = len;
        let t = Tensor::from_parts(new_shape, out);
        self.push(t, Op::Slice { src: a, axis, start }, "slice")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        self.push(t, Op::Reshape(a), "reshape")
    }

    /// Repeat a tensor whose first axis has size 1 `times` along that axis.
    pub fn repeat_first(&mut self, a: Var, times: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rank() == 0 || x.shape()[0] != 1 || times == 0 {
            return Err(Error::invalid("repeat_first needs a leading axis of size 1"));
        }
        let mut out = Vec::with_capacity(x.len() * times);
        for _ in 0..times {
            out.extend_from_slice(x.data());
        }
        let mut shape = x.shape().to_vec();
        shape[0] = times;
        let t = Tensor::from_parts(shape, out);
        self.push(t, Op::RepeatFirst(a), "repeat_first")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.filter(|_| node.needs_grad))
            .collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let send = |v: Var, grad: Vec<f32>, grads: &mut [Option<Vec<f32>>]| {
            if self.needs(v) {
                match &mut grads[v.0] {
                    Some(d) => d.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(grad),
                }
            }
        };
        let map = |a: &[f32], f: &dyn Fn(usize) -> f32| -> Vec<f32> { (0..a.len()).map(f).collect() };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec(), grads);
                send(*b, g.to_vec(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec(), grads);
                send(*b, g.iter().map(|v| -v).collect(), grads);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                send(*a, map(g, &|i| g[i] * bv[i]), grads);
                send(*b, map(g, &|i| g[i] * av[i]), grads);
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                send(*a, map(g, &|i| g[i] / bv[i]), grads);
                send(*b, map(g, &|i| -g[i] * av[i] / (bv[i] * bv[i])), grads);
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect(), grads),
            Op::AddScalar(a) => send(*a, g.to_vec(), grads),
            Op::Exp(a) => send(*a, map(g, &|i| g[i] * y[i]), grads),
            Op::Log(a) => {
                let av = val(*a);
                send(*a, map(g, &|i| g[i] / av[i]), grads);
            }
            Op::Tanh(a) => send(*a, map(g, &|i| g[i] * (1.0 - y[i] * y[i])), grads),
            Op::Sigmoid(a) => send(*a, map(g, &|i| g[i] * y[i] * (1.0 - y[i])), grads),
            Op::Relu(a) => {
                let av = val(*a);
                send(*a, map(g, &|i| if av[i] > 0.0 { g[i] } else { 0.0 }), grads);
            }
            Op::Elu(a) => {
                let av = val(*a);
                send(*a, map(g, &|i| if av[i] > 0.0 { g[i] } else { g[i] * (y[i] + 1.0) }), grads);
            }
            Op::Square(a) => {
                let av = val(*a);
                send(*a, map(g, &|i| 2.0 * g[i] * av[i]), grads);
            }
            Op::ClampMin(a, floor) => {
                let av = val(*a);
                send(*a, map(g, &|i| if av[i] > *floor { g[i] } else { 0.0 }), grads);
            }
            Op::Dense { x, w, b } => {
                let (xt, wt) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                let (rows, inp, out) = (xt.shape()[0], wt.shape()[0], wt.shape()[1]);
                let (xd, wd) = (xt.data(), wt.data());
                if self.needs(*x) {
                    let mut dx = vec![0.0f32; rows * inp];
                    for r in 0..rows {
                        let g_row = &g[r * out..(r + 1) * out];
                        for i in 0..inp {
                            let w_row = &wd[i * out..(i + 1) * out];
                            dx[r * inp + i] = dot(g_row, w_row);
                        }
                    }
                    send(*x, dx, grads);
                }
                if self.needs(*w) {
                    // accumulate in place: a weight shared across time steps
                    // would otherwise get a fresh buffer per step
                    let dw = grads[w.0].get_or_insert_with(|| vec![0.0f32; inp * out]);
                    for r in 0..rows {
                        let g_row = &g[r * out..(r + 1) * out];
                        for i in 0..inp {
                            let xi = xd[r * inp + i];
                            if xi == 0.0 {
                                continue;
                            }
                            dw[i * out..(i + 1) * out]
                                .iter_mut()
                                .zip(g_row)
                                .for_each(|(d, &gv)| *d += xi * gv);
                        }
                    }
                }
                if self.needs(*b) {
                    let mut db = vec![0.0f32; out];
                    for g_row in g.chunks(out) {
                        db.iter_mut().zip(g_row).for_each(|(d, &gv)| *d += gv);
                    }
                    send(*b, db, grads);
                }
            }
            Op::Conv2d { x, k, b, stride, pad_top, pad_left } => {
                let (xt, kt) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
                let s = xt.shape();
                let ks = kt.shape();
                let out_shape = node.value.shape();
                let geo = ConvGeometry {
                    n: s[0],
                    c: s[1],
                    h: s[2],
                    w: s[3],
                    kn: ks[0],
                    kh: ks[2],
                    kw: ks[3],
                    oh: out_shape[2],
                    ow: out_shape[3],
                    pt: *pad_top,
                    pl: *pad_left,
                    stride: *stride,
                };
                let (want_x, want_k) = (self.needs(*x), self.needs(*k));
                let mut dx = if want_x { vec![0.0f32; xt.len()] } else { Vec::new() };
                let mut dk = if want_k { vec![0.0f32; kt.len()] } else { Vec::new() };
                let (xd, kd) = (xt.data(), kt.data());
                let st = *stride;
                geo.for_each_tap(|o_idx, i_idx, k_idx, len| {
                    let gs = &g[o_idx..o_idx + len];
                    if want_k {
                        let mut acc = 0.0f32;
                        for (j, &gv) in gs.iter().enumerate() {
                            acc += gv * xd[i_idx + j * st];
                        }
                        dk[k_idx] += acc;
                    }
                    if want_x {
                        let wv = kd[k_idx];
                        for (j, &gv) in gs.iter().enumerate() {
                            dx[i_idx + j * st] += wv * gv;
                        }
                    }
                });
                if want_x {
                    send(*x, dx, grads);
                }
                if want_k {
                    send(*k, dk, grads);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let plane = geo.oh * geo.ow;
                        let mut db = vec![0.0f32; geo.kn];
                        for (p, chunk) in g.chunks(plane).enumerate() {
                            db[p % geo.kn] += chunk.iter().sum::<f32>();
                        }
                        send(*b, db, grads);
                    }
                }
            }
            Op::Softmax(a) => {
                let cols = last_dim(&node.value);
                let mut dx = vec![0.0f32; g.len()];
                for ((d, gr), yr) in dx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        d[j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(*a, dx, grads);
            }
            Op::LogSoftmax(a) => {
                let cols = last_dim(&node.value);
                let mut dx = vec![0.0f32; g.len()];
                for ((d, gr), yr) in dx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    let total: f32 = gr.iter().sum();
                    for j in 0..cols {
                        d[j] = gr[j] - math::exp(yr[j]) * total;
                    }
                }
                send(*a, dx, grads);
            }
            Op::LogSumExp(a) => {
                let xt = &self.nodes[a.0].value;
                let cols = last_dim(xt);
                let mut dx = vec![0.0f32; xt.len()];
                for (r, (d, xr)) in dx.chunks_mut(cols).zip(xt.data().chunks(cols)).enumerate() {
                    for j in 0..cols {
                        d[j] = g[r] * math::exp(xr[j] - y[r]);
                    }
                }
                send(*a, dx, grads);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                send(*a, vec![g[0]; n], grads);
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let span = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.nodes[p.0].value.shape()[*axis] * inner;
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let base = o * span + offset;
                            d.extend_from_slice(&g[base..base + chunk]);
                        }
                        send(p, d, grads);
                    }
                    offset += chunk;
                }
            }
            Op::Slice { src, axis, start } => {
                let src_shape = self.nodes[src.0].value.shape();
                let len = node.value.shape()[*axis];
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[axis + 1..].iter().product();
                let span = src_shape[*axis] * inner;
                let mut d = vec![0.0f32; outer * span];
                for o in 0..outer {
                    let dst = o * span + start * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                send(*src, d, grads);
            }
            Op::Reshape(a) => send(*a, g.to_vec(), grads),
            Op::RepeatFirst(a) => {
                let n = self.nodes[a.0].value.len();
                let mut d = vec![0.0f32; n];
                for chunk in g.chunks(n) {
                    d.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                send(*a, d, grads);
            }
        }
    }
}

/// Index bookkeeping shared by the convolution forward and backward passes.
struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kn: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pt: usize,
    pl: usize,
    stride: usize,
}

impl ConvGeometry {
    /// Calls `f(out_index, in_index, kernel_index, run_len)` for every
    /// contiguous run of output columns touched by one kernel tap. Input
    /// indices advance by `stride` per output column.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let s = self.stride as isize;
        for b in 0..self.n {
            for k in 0..self.kn {
                let o_plane = (b * self.kn + k) * self.oh * self.ow;
                for c in 0..self.c {
                    let i_plane = (b * self.c + c) * self.h * self.w;
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let k_idx = ((k * self.c + c) * self.kh + ky) * self.kw + kx;
                            let shift = kx as isize - self.pl as isize;
                            // ix = ox*s + shift must lie in [0, w)
                            let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
                            let hi_incl = (self.w as isize - 1 - shift).div_euclid(s);
                            let hi = (hi_incl + 1).min(self.ow as isize);
                            if hi <= lo {
                                continue;
                            }
                            let len = (hi - lo) as usize;
                            for oy in 0..self.oh {
                                let iy = (oy * self.stride + ky) as isize - self.pt as isize;
                                if iy < 0 || iy >= self.h as isize {
                                    continue;
                                }
                                let ix0 = lo * s + shift;
                                let o_idx = o_plane + oy * self.ow + lo as usize;
                                let i_idx = i_plane + iy as usize * self.w + ix0 as usize;
                                f(o_idx, i_idx, k_idx, len);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn log_sum_exp(row: &[f32]) -> f32 {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !m.is_finite() {
        return m;
    }
    m + math::ln(row.iter().map(|&v| math::exp(v - m)).sum::<f32>())
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - m);
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
