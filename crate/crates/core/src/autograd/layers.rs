//! Parameterized building blocks on top of [`Graph`].

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, ParamSet};
use super::tensor::Tensor;
use crate::math;
use crate::{Error, Result};

/// Uniform Glorot initialization: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let a = math::sqrt(6.0 / (fan_in + fan_out) as f32);
    Tensor::from_fn(shape, |_| rng.random_range(-a..a))
}

/// Affine layer `y = x W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let w = params.add(
            &format!("{name}.weight"),
            glorot_uniform(&[input, output], input, output, rng),
        );
        let b = params.add(&format!("{name}.bias"), Tensor::zeros(&[output]));
        Dense { w, b, input, output }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.dense(x, p.var(self.w), p.var(self.b))
    }

    /// Zero both weights and bias.
    pub fn zero(&self, params: &mut ParamSet) {
        params.get_mut(self.w).data_mut().fill(0.0);
        params.get_mut(self.b).data_mut().fill(0.0);
    }
}

/// Square-kernel convolution with bias and "same" padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let area = kernel * kernel;
        let kernels = params.add(
            &format!("{name}.kernels"),
            glorot_uniform(
                &[out_channels, in_channels, kernel, kernel],
                in_channels * area,
                out_channels * area,
                rng,
            ),
        );
        let bias = params.add(&format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Conv2d { kernels, bias, in_channels, out_channels, stride }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.kernels), Some(p.var(self.bias)), self.stride)
    }
}

/// One LSTM step. `w` is `[I + H, 4H]` with gate blocks ordered
/// input, forget, candidate, output; `b` is `[4H]`.
pub fn lstm_cell(g: &mut Graph, x: Var, h: Var, c: Var, w: Var, b: Var) -> Result<(Var, Var)> {
    let hidden = g.shape(h)[1];
    if g.shape(c) != g.shape(h) || g.shape(w)[1] != 4 * hidden {
        return Err(Error::ShapeMismatch {
            op: "lstm_cell",
            left: g.shape(h).to_vec(),
            right: g.shape(w).to_vec(),
        });
    }
    let xh = g.concat(&[x, h], 1)?;
    let gates = g.dense(xh, w, b)?;
    let i_raw = g.slice(gates, 1, 0, hidden)?;
    let f_raw = g.slice(gates, 1, hidden, hidden)?;
    let c_raw = g.slice(gates, 1, 2 * hidden, hidden)?;
    let o_raw = g.slice(gates, 1, 3 * hidden, hidden)?;
    let i = g.sigmoid(i_raw)?;
    let f = g.sigmoid(f_raw)?;
    let cand = g.tanh(c_raw)?;
    let o = g.sigmoid(o_raw)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Parameters of an LSTM cell.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Weights drawn from `U(-1/sqrt(H), 1/sqrt(H))`, biases zero.
    pub fn new(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / math::sqrt(hidden as f32);
        let w = params.add(
            &format!("{name}.weight"),
            Tensor::from_fn(&[input + hidden, 4 * hidden], |_| rng.random_range(-a..a)),
        );
        let b = params.add(&format!("{name}.bias"), Tensor::zeros(&[4 * hidden]));
        LstmCell { w, b, input, hidden }
    }

    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        lstm_cell(g, x, h, c, p.var(self.w), p.var(self.b))
    }

    /// Zero state for a batch of `rows`.
    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> Result<(Var, Var)> {
        let h = g.constant(Tensor::zeros(&[rows, self.hidden]))?;
        let c = g.constant(Tensor::zeros(&[rows, self.hidden]))?;
        Ok((h, c))
    }
}

/// Collect per-row values of a `[rows, cols]` node into owned rows.
pub fn rows_of(g: &Graph, v: Var) -> Vec<Vec<f32>> {
    let t = g.value(v);
    let cols = *t.shape().last().unwrap_or(&1);
    t.data().chunks(cols).map(|r| r.to_vec()).collect()
}
