//! Bivariate Gaussian mixture head shared by the recurrent and convolutional
//! decoders.
//!
//! A raw head row has `6M + 3` entries laid out as
//! `[weight logits | mu_x | mu_y | log sigma_x | log sigma_y | corr (pre-tanh) | pen logits]`.
//! Parameterization (softmax, exp, tanh) happens after any blending, so
//! every valid head row yields valid parameters.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{softmax_in_place, Graph, Tensor, Var};
use crate::math;
use crate::stroke::{PenState, Stroke5Point, StrokeSequence};
use crate::{Error, Result};

/// Floor applied to the mixture density before taking its log.
pub const DENSITY_FLOOR: f64 = 1e-30;
/// Correlations are clamped to `±CORR_LIMIT` so `1 - corr²` stays positive in f32.
pub const CORR_LIMIT: f32 = 1.0 - 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn head_size(components: usize) -> usize {
    6 * components + 3
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f32>,
    pub mu_x: Vec<f32>,
    pub mu_y: Vec<f32>,
    pub sigma_x: Vec<f32>,
    pub sigma_y: Vec<f32>,
    pub corr: Vec<f32>,
    pub pen_logits: [f32; 3],
}

impl MixtureParams {
    pub fn from_head(raw: &[f32], components: usize) -> Result<Self> {
        Self::from_head_tempered(raw, components, 1.0)
    }

    /// Parameterize with sampling temperature `t`: weight and pen logits are
    /// divided by `t`, sigmas multiplied by `sqrt(t)`.
    pub fn from_head_tempered(raw: &[f32], components: usize, t: f32) -> Result<Self> {
        let m = components;
        if raw.len() != head_size(m) {
            return Err(Error::ShapeMismatch {
                op: "mixture head",
                left: vec![head_size(m)],
                right: vec![raw.len()],
            });
        }
        if !(t > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        let block = |k: usize| &raw[k * m..(k + 1) * m];
        let mut weights: Vec<f32> = block(0).iter().map(|v| v / t).collect();
        softmax_in_place(&mut weights);
        let st = math::sqrt(t);
        let sigma = |k: usize| -> Vec<f32> { block(k).iter().map(|&v| math::exp(v) * st).collect() };
        let corr = block(5)
            .iter()
            .map(|&v| math::tanh(v).clamp(-CORR_LIMIT, CORR_LIMIT))
            .collect();
        let p = &raw[6 * m..];
        Ok(MixtureParams {
            weights,
            mu_x: block(1).to_vec(),
            mu_y: block(2).to_vec(),
            sigma_x: sigma(3),
            sigma_y: sigma(4),
            corr,
            pen_logits: [p[0] / t, p[1] / t, p[2] / t],
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn pen_probs(&self) -> [f32; 3] {
        let mut p = self.pen_logits;
        softmax_in_place(&mut p);
        p
    }

    /// Simplex weights, positive sigmas, |corr| < 1, normalized pen probabilities.
    pub fn is_valid(&self) -> bool {
        let wsum: f32 = self.weights.iter().sum();
        let psum: f32 = self.pen_probs().iter().sum();
        (wsum - 1.0).abs() <= 1e-6
            && self.weights.iter().all(|&w| w >= 0.0)
            && self.sigma_x.iter().chain(&self.sigma_y).all(|&s| s > 0.0)
            && self.corr.iter().all(|c| c.abs() < 1.0)
            && (psum - 1.0).abs() <= 1e-6
    }

    fn component_log_density(&self, j: usize, dx: f64, dy: f64) -> f64 {
        let (sx, sy) = (self.sigma_x[j] as f64, self.sigma_y[j] as f64);
        let rho = self.corr[j] as f64;
        let zx = (dx - self.mu_x[j] as f64) / sx;
        let zy = (dy - self.mu_y[j] as f64) / sy;
        let one_m = 1.0 - rho * rho;
        let quad = zx * zx + zy * zy - 2.0 * rho * zx * zy;
        -quad / (2.0 * one_m) - LN_2PI - math::ln64(sx) - math::ln64(sy) - 0.5 * math::ln64(one_m)
    }

    /// Mixture density at `(dx, dy)`.
    pub fn density(&self, dx: f64, dy: f64) -> f64 {
        (0..self.components())
            .map(|j| self.weights[j] as f64 * math::exp64(self.component_log_density(j, dx, dy)))
            .sum()
    }
}

/// `-log Σ_j w_j N(dx, dy | mu_j, sigma_j, corr_j)`, evaluated with
/// log-sum-exp and the density floored at [`DENSITY_FLOOR`].
pub fn gmm_nll(params: &MixtureParams, dx: f32, dy: f32) -> f32 {
    let terms: Vec<f64> = (0..params.components())
        .map(|j| math::ln64(params.weights[j] as f64) + params.component_log_density(j, dx as f64, dy as f64))
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = if m.is_finite() {
        m + math::ln64(terms.iter().map(|t| math::exp64(t - m)).sum::<f64>())
    } else {
        m
    };
    -(lse.max(math::ln64(DENSITY_FLOOR))) as f32
}

/// Offset loss: per-step NLL summed over steps up to and including the
/// first end-of-sketch target, divided by `s_max`.
pub fn loss_ls(step_params: &[MixtureParams], targets: &StrokeSequence, s_max: usize) -> Result<f32> {
    let stop = targets
        .stop_index()
        .ok_or_else(|| Error::data("targets have no end-of-sketch point"))?;
    if step_params.len() <= stop {
        return Err(Error::invalid("fewer mixture steps than target points"));
    }
    let total: f64 = (0..=stop)
        .map(|i| gmm_nll(&step_params[i], targets.points[i].dx, targets.points[i].dy) as f64)
        .sum();
    Ok((total / s_max as f64) as f32)
}

/// Pen-state loss: cross-entropy between one-hot targets (padded with
/// end-of-sketch up to `s_max`) and predicted pen probabilities at every
/// step, divided by `s_max`.
pub fn loss_lp(step_params: &[MixtureParams], targets: &StrokeSequence, s_max: usize) -> Result<f32> {
    if step_params.len() < s_max {
        return Err(Error::invalid("pen loss needs a prediction for every step up to S_max"));
    }
    let padded = targets.padded(s_max);
    let total: f64 = padded
        .iter()
        .zip(step_params)
        .map(|(t, p)| {
            let probs = p.pen_probs();
            -math::ln64(probs[t.pen.index()] as f64)
        })
        .sum();
    Ok((total / s_max as f64) as f32)
}

/// Per-row mixture NLL of a `[N, 6M+3]` head against target offsets,
/// built from differentiable primitives. Returns `[N, 1]`.
pub fn mixture_nll_rows(g: &mut Graph, head: Var, dx: &[f32], dy: &[f32], components: usize) -> Result<Var> {
    let m = components;
    let rows = g.shape(head)[0];
    if dx.len() != rows || dy.len() != rows || g.shape(head)[1] != head_size(m) {
        return Err(Error::ShapeMismatch {
            op: "mixture_nll_rows",
            left: g.shape(head).to_vec(),
            right: vec![dx.len(), dy.len()],
        });
    }
    let w_logits = g.slice(head, 1, 0, m)?;
    let mu_x = g.slice(head, 1, m, m)?;
    let mu_y = g.slice(head, 1, 2 * m, m)?;
    let log_sx = g.slice(head, 1, 3 * m, m)?;
    let log_sy = g.slice(head, 1, 4 * m, m)?;
    let corr_raw = g.slice(head, 1, 5 * m, m)?;

    let log_w = g.log_softmax(w_logits)?;
    let rho = g.tanh(corr_raw)?;
    let rho = g.clamp_min(rho, -CORR_LIMIT)?;
    let neg_rho = g.scale(rho, -1.0)?;
    let neg_rho = g.clamp_min(neg_rho, -CORR_LIMIT)?;
    let rho = g.scale(neg_rho, -1.0)?;

    let expand = |vals: &[f32]| Tensor::from_fn(&[rows, m], |i| vals[i / m]);
    let tx = g.constant(expand(dx))?;
    let ty = g.constant(expand(dy))?;
    let inv_sx = {
        let n = g.scale(log_sx, -1.0)?;
        g.exp(n)?
    };
    let inv_sy = {
        let n = g.scale(log_sy, -1.0)?;
        g.exp(n)?
    };
    let ex = g.sub(tx, mu_x)?;
    let zx = g.mul(ex, inv_sx)?;
    let ey = g.sub(ty, mu_y)?;
    let zy = g.mul(ey, inv_sy)?;
    let zx2 = g.square(zx)?;
    let zy2 = g.square(zy)?;
    let zxy = g.mul(zx, zy)?;
    let cross = g.mul(rho, zxy)?;
    let cross2 = g.scale(cross, 2.0)?;
    let quad = g.add(zx2, zy2)?;
    let quad = g.sub(quad, cross2)?;
    let rho2 = g.square(rho)?;
    let neg_rho2 = g.scale(rho2, -1.0)?;
    let one_m = g.add_scalar(neg_rho2, 1.0)?;
    let ratio = g.div(quad, one_m)?;
    let exponent = g.scale(ratio, -0.5)?;
    let log_one_m = g.log(one_m)?;
    let half_log = g.scale(log_one_m, 0.5)?;
    let norm = g.add(log_sx, log_sy)?;
    let norm = g.add(norm, half_log)?;
    let norm = g.add_scalar(norm, LN_2PI as f32)?;
    let log_n = g.sub(exponent, norm)?;
    let joint = g.add(log_w, log_n)?;
    let lse = g.log_sum_exp(joint)?;
    let floored = g.clamp_min(lse, math::ln64(DENSITY_FLOOR) as f32)?;
    g.scale(floored, -1.0)
}

/// Log pen probabilities `[N, 3]` of a `[N, 6M+3]` head.
pub fn pen_log_probs(g: &mut Graph, head: Var, components: usize) -> Result<Var> {
    let logits = g.slice(head, 1, 6 * components, 3)?;
    g.log_softmax(logits)
}

/// Loss components of one sequence (or the batch mean).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub ls: f32,
    pub lp: f32,
    pub kl: f32,
    pub s_stop: usize,
    pub s_max: usize,
}

impl LossBreakdown {
    /// `L_S + L_P + kl_weight · L_KL`.
    pub fn total(&self, kl_weight: f32) -> f32 {
        self.ls + self.lp + kl_weight * self.kl
    }

    pub fn reconstruction(&self) -> f32 {
        self.ls + self.lp
    }
}

/// Graph nodes of `L_S` and `L_P` for a stack of decoder heads.
pub struct SequenceLoss {
    pub ls: Var,
    pub lp: Var,
}

/// Teacher-forced `L_S` and `L_P` over `[T·B, 6M+3]` heads stored step-major
/// (row `t·B + b`). Each target must be padded/truncated to `T` rows; the
/// result is averaged over the batch.
pub fn sequence_losses(
    g: &mut Graph,
    heads: Var,
    targets: &[&StrokeSequence],
    steps: usize,
    s_max: usize,
    components: usize,
) -> Result<SequenceLoss> {
    let batch = targets.len();
    let rows = steps * batch;
    let mut dx = vec![0.0f32; rows];
    let mut dy = vec![0.0f32; rows];
    let mut mask = vec![0.0f32; rows];
    let mut onehot = vec![0.0f32; rows * 3];
    for (b, seq) in targets.iter().enumerate() {
        let stop = seq
            .stop_index()
            .ok_or_else(|| Error::data("targets have no end-of-sketch point"))?;
        for (t, p) in seq.padded(steps).iter().enumerate() {
            let r = t * batch + b;
            dx[r] = p.dx;
            dy[r] = p.dy;
            if t <= stop {
                mask[r] = 1.0;
            }
            onehot[r * 3 + p.pen.index()] = 1.0;
        }
    }
    let norm = 1.0 / (s_max as f32 * batch as f32);
    let nll = mixture_nll_rows(g, heads, &dx, &dy, components)?;
    let mask = g.constant(Tensor::new(&[rows, 1], mask)?)?;
    let masked = g.mul(nll, mask)?;
    let ls = g.sum(masked)?;
    let ls = g.scale(ls, norm)?;
    let logp = pen_log_probs(g, heads, components)?;
    let onehot = g.constant(Tensor::new(&[rows, 3], onehot)?)?;
    let picked = g.mul(logp, onehot)?;
    let lp = g.sum(picked)?;
    let lp = g.scale(lp, -norm)?;
    Ok(SequenceLoss { ls, lp })
}

fn categorical(probs: &[f32], rng: &mut impl Rng) -> usize {
    let u: f32 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum; take the last nonzero
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draw the next stroke-5 point from a raw head at temperature `t`.
pub fn sample_point(raw: &[f32], components: usize, t: f32, rng: &mut impl Rng) -> Result<Stroke5Point> {
    let p = MixtureParams::from_head_tempered(raw, components, t)?;
    let j = categorical(&p.weights, rng);
    let n1: f32 = rng.sample(StandardNormal);
    let n2: f32 = rng.sample(StandardNormal);
    let rho = p.corr[j];
    let dx = p.mu_x[j] + p.sigma_x[j] * n1;
    let dy = p.mu_y[j] + p.sigma_y[j] * (rho * n1 + math::sqrt(1.0 - rho * rho) * n2);
    let pen = PenState::from_index(categorical(&p.pen_probs(), rng)).unwrap();
    Ok(Stroke5Point::new(dx, dy, pen))
}
