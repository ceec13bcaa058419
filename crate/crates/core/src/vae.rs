//! Recurrent sketch VAE: bidirectional LSTM encoder, Gaussian latent, and an
//! autoregressive LSTM decoder emitting mixture heads.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{clip_global_norm, Adam, Bound, Dense, Graph, LstmCell, ParamSet, Tensor, Var};
use crate::math;
use crate::mixture::{head_size, sample_point, sequence_losses, LossBreakdown, MixtureParams};
use crate::stroke::{PenState, Stroke5Point, StrokeSequence};
use crate::{seeded_rng, Error, Result, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Mixture components `M`.
    pub components: usize,
    /// Latent size `Z`.
    pub latent: usize,
    /// Encoder hidden size per direction.
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub s_max: usize,
    pub kl_weight: f32,
    pub learning_rate: f32,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f32>,
}

impl VaeConfig {
    pub fn full() -> Self {
        VaeConfig {
            components: 20,
            latent: 128,
            enc_hidden: 256,
            dec_hidden: 512,
            s_max: crate::stroke::DEFAULT_S_MAX,
            kl_weight: 1.0,
            learning_rate: 1e-3,
            batch_size: 100,
            grad_clip: Some(1.0),
        }
    }

    pub fn desk() -> Self {
        VaeConfig {
            latent: 32,
            enc_hidden: 64,
            dec_hidden: 128,
            batch_size: 16,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("components", self.components),
            ("latent", self.latent),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("s_max", self.s_max),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(alloc::format!("{name} must be positive")));
            }
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::invalid("kl_weight must be a finite non-negative number"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be a finite non-negative number"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("grad_clip must be positive"));
            }
        }
        Ok(())
    }
}

/// Posterior summary of one encoded sequence, with the noise used for `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
    pub z: Vec<f32>,
    pub eps: Vec<f32>,
}

/// `-1/2 Σ (1 + log σ² - μ² - σ²) / Z`, the KL of the posterior from N(0, I)
/// averaged over latent dimensions.
pub fn loss_kl(latent: &LatentCode) -> f32 {
    let z = latent.mu.len() as f64;
    let total: f64 = latent
        .mu
        .iter()
        .zip(&latent.sigma)
        .map(|(&m, &s)| {
            let (m, s) = (m as f64, s as f64);
            1.0 + math::ln64(s * s) - m * m - s * s
        })
        .sum();
    (-0.5 * total / z) as f32
}

/// Recurrent decoder state for a single sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

/// Graph handles produced by the encoder for a batch.
pub struct LatentVars {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

/// Hook that can rewrite the decoder's raw head before sampling. `generated`
/// holds every point emitted so far.
pub trait HeadRefiner {
    fn refine_head(&mut self, generated: &[Stroke5Point], rnn_head: &[f32]) -> Result<Vec<f32>>;
}

#[derive(Clone, Debug)]
pub struct SketchVae {
    config: VaeConfig,
    params: ParamSet,
    enc_fwd: LstmCell,
    enc_bwd: LstmCell,
    mu_head: Dense,
    logvar_head: Dense,
    init: Dense,
    decoder: LstmCell,
    head: Dense,
}

fn point_rows(points: &[Stroke5Point]) -> Vec<f32> {
    points.iter().flat_map(|p| p.to_array()).collect()
}

impl SketchVae {
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let (he, hd, z) = (config.enc_hidden, config.dec_hidden, config.latent);
        let enc_fwd = LstmCell::new(&mut params, "encoder.forward", 5, he, &mut rng);
        let enc_bwd = LstmCell::new(&mut params, "encoder.backward", 5, he, &mut rng);
        let mu_head = Dense::new(&mut params, "encoder.mu", 2 * he, z, &mut rng);
        let logvar_head = Dense::new(&mut params, "encoder.logvar", 2 * he, z, &mut rng);
        let init = Dense::new(&mut params, "decoder.init", z, 2 * hd, &mut rng);
        let decoder = LstmCell::new(&mut params, "decoder.lstm", 5 + z, hd, &mut rng);
        let head = Dense::new(&mut params, "decoder.head", hd, head_size(config.components), &mut rng);
        Ok(SketchVae { config, params, enc_fwd, enc_bwd, mu_head, logvar_head, init, decoder, head })
    }

    /// Rebuild a model from stored parameters; names and shapes must match `config`.
    pub fn from_params(config: VaeConfig, stored: &ParamSet) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if stored.len() != model.params.len() {
            return Err(Error::Checkpoint(alloc::format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                stored.len()
            )));
        }
        model.params.load_from(stored)?;
        Ok(model)
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Zero every parameter. Mostly useful for tests of degenerate cases.
    pub fn zero_params(&mut self) {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            self.params.get_mut(id).data_mut().fill(0.0);
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    fn check_batch(&self, seqs: &[&StrokeSequence]) -> Result<()> {
        if seqs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for s in seqs {
            if s.is_empty() {
                return Err(Error::data(alloc::format!("sequence `{}` is empty", s.source_id)));
            }
        }
        Ok(())
    }

    /// Step-major `[B, 5]` inputs for step `t` of padded sequences.
    fn step_input(g: &mut Graph, padded: &[Vec<Stroke5Point>], t: usize) -> Result<Var> {
        let rows: Vec<Stroke5Point> = padded.iter().map(|p| p[t]).collect();
        g.constant(Tensor::new(&[rows.len(), 5], point_rows(&rows))?)
    }

    /// Bidirectional encoding of sequences padded/truncated to `S_max`.
    /// `eps` is the `[B, Z]` reparameterization noise.
    pub fn encode_graph(&self, g: &mut Graph, p: &Bound, seqs: &[&StrokeSequence], eps: Tensor) -> Result<LatentVars> {
        self.check_batch(seqs)?;
        let batch = seqs.len();
        let s_max = self.config.s_max;
        let padded: Vec<Vec<Stroke5Point>> = seqs.iter().map(|s| s.padded(s_max)).collect();
        let inputs: Vec<Var> = (0..s_max)
            .map(|t| Self::step_input(g, &padded, t))
            .collect::<Result<_>>()?;
        let (mut hf, mut cf) = self.enc_fwd.zero_state(g, batch)?;
        for &x in &inputs {
            (hf, cf) = self.enc_fwd.step(g, p, x, hf, cf)?;
        }
        let (mut hb, mut cb) = self.enc_bwd.zero_state(g, batch)?;
        for &x in inputs.iter().rev() {
            (hb, cb) = self.enc_bwd.step(g, p, x, hb, cb)?;
        }
        let both = g.concat(&[hf, hb], 1)?;
        let mu = self.mu_head.forward(g, p, both)?;
        let logvar = self.logvar_head.forward(g, p, both)?;
        let half = g.scale(logvar, 0.5)?;
        let sigma = g.exp(half)?;
        let eps = g.constant(eps)?;
        let noise = g.mul(sigma, eps)?;
        let z = g.add(mu, noise)?;
        Ok(LatentVars { mu, logvar, z })
    }

    fn draw_eps(&self, rows: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(&[rows, self.config.latent], |_| rng.sample(StandardNormal))
    }

    /// Encode one sequence; `z = mu + sigma * eps` with `eps` drawn from `rng`.
    pub fn encode(&self, seq: &StrokeSequence, rng: &mut impl Rng) -> Result<LatentCode> {
        let eps = self.draw_eps(1, rng);
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let lv = self.encode_graph(&mut g, &p, &[seq], eps.clone())?;
        let mu = g.value(lv.mu).data().to_vec();
        let sigma = g.value(lv.logvar).data().iter().map(|&v| math::exp(0.5 * v)).collect();
        Ok(LatentCode { mu, sigma, z: g.value(lv.z).data().to_vec(), eps: eps.into_data() })
    }

    /// Initial `(h, c)` from `z` through a dense layer and `tanh`.
    pub fn init_state_graph(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<(Var, Var)> {
        let hd = self.config.dec_hidden;
        let pre = self.init.forward(g, p, z)?;
        let hc = g.tanh(pre)?;
        Ok((g.slice(hc, 1, 0, hd)?, g.slice(hc, 1, hd, hd)?))
    }

    /// One decoder step for a batch: returns `(head, h, c)`.
    pub fn decoder_step_graph(&self, g: &mut Graph, p: &Bound, prev: Var, z: Var, h: Var, c: Var) -> Result<(Var, Var, Var)> {
        let x = g.concat(&[prev, z], 1)?;
        let (h, c) = self.decoder.step(g, p, x, h, c)?;
        let head = self.head.forward(g, p, h)?;
        Ok((head, h, c))
    }

    /// Teacher-forced heads for `steps` steps, stacked step-major into
    /// `[steps · B, 6M+3]`. Step `t` sees target `t - 1` (the start token at `t = 0`).
    pub fn teacher_forced_heads(&self, g: &mut Graph, p: &Bound, z: Var, seqs: &[&StrokeSequence], steps: usize) -> Result<Var> {
        self.check_batch(seqs)?;
        let padded: Vec<Vec<Stroke5Point>> = seqs
            .iter()
            .map(|s| {
                let mut v = vec![Stroke5Point::START];
                v.extend(s.padded(steps.saturating_sub(1)));
                v
            })
            .collect();
        let (mut h, mut c) = self.init_state_graph(g, p, z)?;
        let mut heads = Vec::with_capacity(steps);
        for t in 0..steps {
            let prev = Self::step_input(g, &padded, t)?;
            let (head, h2, c2) = self.decoder_step_graph(g, p, prev, z, h, c)?;
            heads.push(head);
            (h, c) = (h2, c2);
        }
        g.concat(&heads, 0)
    }

    /// Raw teacher-forced heads of one sequence over `S_max` steps, one row per step.
    pub fn teacher_forced_rows(&self, seq: &StrokeSequence, z: &[f32]) -> Result<Vec<Vec<f32>>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let zv = g.constant(Tensor::new(&[1, self.config.latent], z.to_vec())?)?;
        let heads = self.teacher_forced_heads(&mut g, &p, zv, &[seq], self.config.s_max)?;
        Ok(crate::autograd::rows_of(&g, heads))
    }

    /// Batch losses and gradients for every parameter. `eps` is the `[B, Z]`
    /// latent noise; the total is `L_S + L_P + kl_weight · L_KL`.
    pub fn batch_gradients(&self, batch: &[&StrokeSequence], eps: Tensor, kl_weight: f32) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let s_max = self.config.s_max;
        for s in batch {
            s.validate(s_max)?;
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, true);
        let lv = self.encode_graph(&mut g, &p, batch, eps)?;
        let heads = self.teacher_forced_heads(&mut g, &p, lv.z, batch, s_max)?;
        let losses = sequence_losses(&mut g, heads, batch, s_max, s_max, self.config.components)?;

        // KL, averaged over batch and latent dimensions
        let mu2 = g.square(lv.mu)?;
        let var = g.exp(lv.logvar)?;
        let inner = g.add_scalar(lv.logvar, 1.0)?;
        let inner = g.sub(inner, mu2)?;
        let inner = g.sub(inner, var)?;
        let mean = g.mean(inner)?;
        let kl = g.scale(mean, -0.5)?;

        let recon = g.add(losses.ls, losses.lp)?;
        let total = if kl_weight == 0.0 {
            recon
        } else {
            let weighted = g.scale(kl, kl_weight)?;
            g.add(recon, weighted)?
        };
        let grads = g.backward(total)?;
        let stop = batch.iter().filter_map(|s| s.stop_index()).max().unwrap_or(0);
        let breakdown = LossBreakdown {
            ls: g.value(losses.ls).data()[0],
            lp: g.value(losses.lp).data()[0],
            kl: g.value(kl).data()[0],
            s_stop: stop + 1,
            s_max,
        };
        Ok((breakdown, p.grads(&grads)))
    }

    /// Initial decoder state for a single latent vector.
    pub fn init_state(&self, z: &[f32]) -> Result<DecoderState> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let zv = g.constant(Tensor::new(&[1, self.config.latent], z.to_vec())?)?;
        let (h, c) = self.init_state_graph(&mut g, &p, zv)?;
        Ok(DecoderState { h: g.value(h).data().to_vec(), c: g.value(c).data().to_vec() })
    }

    /// One autoregressive step: the raw `6M+3` head and the next state.
    pub fn decode_step(&self, prev: Stroke5Point, z: &[f32], state: &DecoderState) -> Result<(Vec<f32>, DecoderState)> {
        let hd = self.config.dec_hidden;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(Tensor::new(&[1, 5], prev.to_array().to_vec())?)?;
        let zv = g.constant(Tensor::new(&[1, self.config.latent], z.to_vec())?)?;
        let h = g.constant(Tensor::new(&[1, hd], state.h.clone())?)?;
        let c = g.constant(Tensor::new(&[1, hd], state.c.clone())?)?;
        let (head, h, c) = self.decoder_step_graph(&mut g, &p, x, zv, h, c)?;
        let next = DecoderState { h: g.value(h).data().to_vec(), c: g.value(c).data().to_vec() };
        Ok((g.value(head).data().to_vec(), next))
    }

    /// Mixture parameters of one decoder step.
    pub fn step_params(&self, prev: Stroke5Point, z: &[f32], state: &DecoderState) -> Result<(MixtureParams, DecoderState)> {
        let (head, next) = self.decode_step(prev, z, state)?;
        Ok((MixtureParams::from_head(&head, self.config.components)?, next))
    }

    /// Autoregressive sampling from the start token until end-of-sketch or
    /// `S_max` points. When the cap is hit the last point is forced to end
    /// the sketch.
    pub fn sample(&self, z: &[f32], temperature: f32, rng: &mut impl Rng, mut refiner: Option<&mut dyn HeadRefiner>) -> Result<StrokeSequence> {
        if !(temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if z.len() != self.config.latent {
            return Err(Error::ShapeMismatch {
                op: "sample",
                left: vec![self.config.latent],
                right: vec![z.len()],
            });
        }
        let mut state = self.init_state(z)?;
        let mut prev = Stroke5Point::START;
        let mut points: Vec<Stroke5Point> = Vec::new();
        while points.len() < self.config.s_max {
            let (head, next) = self.decode_step(prev, z, &state)?;
            state = next;
            let head = match refiner.as_deref_mut() {
                Some(r) => r.refine_head(&points, &head)?,
                None => head,
            };
            let point = sample_point(&head, self.config.components, temperature, rng)?;
            points.push(point);
            if point.pen == PenState::End {
                break;
            }
            prev = point;
        }
        if let Some(last) = points.last_mut() {
            last.pen = PenState::End;
        }
        Ok(StrokeSequence::new(String::from("sample"), points))
    }

    /// Draw `z` from the standard normal prior.
    pub fn prior_z(&self, rng: &mut impl Rng) -> Vec<f32> {
        self.draw_eps(1, rng).into_data()
    }
}

/// One logged training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub ls: f32,
    pub lp: f32,
    pub kl: f32,
    pub total: f32,
}

/// Mini-batch Adam trainer for [`SketchVae`].
pub struct VaeTrainer {
    model: SketchVae,
    adam: Adam,
    rng: SeededRng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl VaeTrainer {
    pub fn new(model: SketchVae, seed: u64) -> Self {
        let adam = Adam::new(model.params());
        VaeTrainer { model, adam, rng: seeded_rng(seed), order: Vec::new(), cursor: 0, step: 0 }
    }

    pub fn model(&self) -> &SketchVae {
        &self.model
    }

    pub fn into_model(self) -> SketchVae {
        self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One update on an explicit batch.
    pub fn train_step(&mut self, batch: &[&StrokeSequence]) -> Result<LossRecord> {
        let cfg = self.model.config().clone();
        let eps = self.model.draw_eps(batch.len(), &mut self.rng);
        let (loss, mut grads) = self.model.batch_gradients(batch, eps, cfg.kl_weight)?;
        let step = self.step;
        let total = loss.total(cfg.kl_weight);
        if !total.is_finite() {
            return Err(Error::Diverged { step });
        }
        if let Some(clip) = cfg.grad_clip {
            clip_global_norm(&mut grads, clip);
        }
        self.adam
            .step(self.model.params_mut(), &grads, cfg.learning_rate)
            .map_err(|e| match e {
                Error::NanGradient(_) => Error::Diverged { step },
                other => other,
            })?;
        self.step += 1;
        Ok(LossRecord { step, ls: loss.ls, lp: loss.lp, kl: loss.kl, total })
    }

    fn next_batch<'a>(&mut self, data: &'a [StrokeSequence]) -> Vec<&'a StrokeSequence> {
        let size = self.model.config().batch_size.min(data.len());
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor >= self.order.len() {
                self.order = (0..data.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(&data[self.order[self.cursor]]);
            self.cursor += 1;
        }
        batch
    }

    /// Run `steps` updates over shuffled mini-batches, reporting each record.
    pub fn train(&mut self, data: &[StrokeSequence], steps: usize, mut on_record: impl FnMut(&LossRecord)) -> Result<()> {
        if data.is_empty() {
            return Err(Error::data("training split is empty"));
        }
        for _ in 0..steps {
            let batch = self.next_batch(data);
            let record = self.train_step(&batch)?;
            on_record(&record);
        }
        Ok(())
    }
}
