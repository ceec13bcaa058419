//! Convolutional decoder over the raster of the partial sketch. Its raw head
//! is blended with the recurrent decoder's head before mixture
//! parameterization.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{clip_global_norm, Adam, Bound, Conv2d, Dense, Graph, ParamSet, Tensor, Var};
use crate::mixture::{head_size, sequence_losses, MixtureParams};
use crate::raster::{render_sized, IncrementalRaster, RasterImage};
use crate::stroke::{random_crop, Stroke5Point, StrokeSequence};
use crate::vae::{HeadRefiner, LossRecord, SketchVae};
use crate::{seeded_rng, Error, Result, SeededRng};

/// Offsets are rasterized as stored; the viewport fit makes the picture
/// independent of their overall scale.
const RASTER_SCALE: f32 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinerConfig {
    /// Channel depth of each of the six conv layers; the first entry is also
    /// the number of channels the grayscale raster is replicated into.
    pub conv_depths: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub kernel: usize,
    /// Widths of the two hidden dense layers after flattening.
    pub dense_widths: [usize; 2],
    pub image_size: usize,
    pub components: usize,
    pub blend_alpha: f32,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub grad_clip: Option<f32>,
}

impl RefinerConfig {
    pub fn full() -> Self {
        RefinerConfig {
            conv_depths: vec![3, 128, 128, 256, 256, 512],
            conv_strides: vec![1, 2, 1, 2, 2, 2],
            kernel: 3,
            dense_widths: [1024, 512],
            image_size: crate::raster::RASTER_SIZE,
            components: 20,
            blend_alpha: 0.5,
            learning_rate: 1e-6,
            batch_size: 100,
            grad_clip: Some(1.0),
        }
    }

    pub fn desk() -> Self {
        RefinerConfig {
            conv_depths: vec![3, 8, 8, 16, 16, 32],
            dense_widths: [64, 32],
            image_size: 64,
            learning_rate: 1e-3,
            batch_size: 8,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_depths.len() != 6 || self.conv_strides.len() != 6 {
            return Err(Error::invalid("refiner needs exactly six conv depths and six strides"));
        }
        if self.conv_depths.iter().chain(&self.conv_strides).any(|&v| v == 0) {
            return Err(Error::invalid("conv depths and strides must be positive"));
        }
        if self.kernel == 0 || self.image_size == 0 || self.components == 0 || self.batch_size == 0 {
            return Err(Error::invalid("kernel, image_size, components and batch_size must be positive"));
        }
        if self.dense_widths.contains(&0) {
            return Err(Error::invalid("dense widths must be positive"));
        }
        if !(0.0..=1.0).contains(&self.blend_alpha) {
            return Err(Error::invalid("blend_alpha must lie in [0, 1]"));
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

    /// `(channels, height, width)` of the last conv layer's output.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let side = self.conv_strides.iter().fold(self.image_size, |s, &st| s.div_ceil(st));
        (*self.conv_depths.last().unwrap_or(&0), side, side)
    }
}

/// `alpha · rnn + (1 - alpha) · cnn` on raw heads. The endpoints return the
/// corresponding input unchanged.
pub fn blend(rnn: &[f32], cnn: &[f32], alpha: f32) -> Result<Vec<f32>> {
    if rnn.len() != cnn.len() {
        return Err(Error::ShapeMismatch { op: "blend", left: vec![rnn.len()], right: vec![cnn.len()] });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("blend alpha must lie in [0, 1]"));
    }
    if alpha == 1.0 {
        return Ok(rnn.to_vec());
    }
    if alpha == 0.0 {
        return Ok(cnn.to_vec());
    }
    Ok(rnn.iter().zip(cnn).map(|(&r, &c)| alpha * r + (1.0 - alpha) * c).collect())
}

/// Blend then parameterize.
pub fn blend_params(rnn: &[f32], cnn: &[f32], alpha: f32, components: usize) -> Result<MixtureParams> {
    MixtureParams::from_head(&blend(rnn, cnn, alpha)?, components)
}

#[derive(Clone, Debug)]
pub struct CnnRefiner {
    config: RefinerConfig,
    params: ParamSet,
    convs: Vec<Conv2d>,
    hidden1: Dense,
    hidden2: Dense,
    skip: Option<Dense>,
    out: Dense,
}

impl CnnRefiner {
    pub fn new(config: RefinerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let mut convs = Vec::with_capacity(6);
        let mut channels = config.conv_depths[0];
        for (i, (&depth, &stride)) in config.conv_depths.iter().zip(&config.conv_strides).enumerate() {
            let name = alloc::format!("refiner.conv{i}");
            convs.push(Conv2d::new(&mut params, &name, channels, depth, config.kernel, stride, &mut rng));
            channels = depth;
        }
        let (c, h, w) = config.feature_shape();
        let [w1, w2] = config.dense_widths;
        let hidden1 = Dense::new(&mut params, "refiner.dense1", c * h * w, w1, &mut rng);
        let hidden2 = Dense::new(&mut params, "refiner.dense2", w1, w2, &mut rng);
        let skip = (w1 != w2).then(|| Dense::new(&mut params, "refiner.skip", w1, w2, &mut rng));
        let out = Dense::new(&mut params, "refiner.head", w2, head_size(config.components), &mut rng);
        Ok(CnnRefiner { config, params, convs, hidden1, hidden2, skip, out })
    }

    pub fn from_params(config: RefinerConfig, stored: &ParamSet) -> Result<Self> {
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

    pub fn config(&self) -> &RefinerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Zero the output layer so every head is all zeros.
    pub fn zero_head(&mut self) {
        self.out.zero(&mut self.params);
    }

    /// Conv stack output `[B, C, H, W]` for images `[B, C0, S, S]`.
    pub fn features_graph(&self, g: &mut Graph, p: &Bound, images: Var) -> Result<Var> {
        let mut x = images;
        for conv in &self.convs {
            let y = conv.forward(g, p, x)?;
            x = g.relu(y)?;
        }
        Ok(x)
    }

    /// Raw heads `[B, 6M+3]` for images `[B, C0, S, S]`.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, images: Var) -> Result<Var> {
        let feats = self.features_graph(g, p, images)?;
        let b = g.shape(feats)[0];
        let flat_len: usize = g.shape(feats)[1..].iter().product();
        let flat = g.reshape(feats, &[b, flat_len])?;
        let d1 = self.hidden1.forward(g, p, flat)?;
        let d1 = g.elu(d1)?;
        let d2 = self.hidden2.forward(g, p, d1)?;
        let d2 = g.elu(d2)?;
        let shortcut = match &self.skip {
            Some(proj) => proj.forward(g, p, d1)?,
            None => d1,
        };
        let d3_in = g.add(d2, shortcut)?;
        self.out.forward(g, p, d3_in)
    }

    fn check_image(&self, image: &RasterImage) -> Result<()> {
        let s = self.config.image_size;
        if image.size() != s {
            return Err(Error::ShapeMismatch { op: "refine", left: vec![s, s], right: vec![image.size(), image.size()] });
        }
        Ok(())
    }

    /// Stack rasters into `[B, C0, S, S]`.
    pub fn image_batch(&self, images: &[&RasterImage]) -> Result<Tensor> {
        let c = self.config.conv_depths[0];
        let s = self.config.image_size;
        let mut data = Vec::with_capacity(images.len() * c * s * s);
        for img in images {
            self.check_image(img)?;
            data.extend_from_slice(img.to_tensor(c).data());
        }
        Tensor::new(&[images.len(), c, s, s], data)
    }

    /// Raw head for one raster.
    pub fn head(&self, image: &RasterImage) -> Result<Vec<f32>> {
        let batch = self.image_batch(&[image])?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(batch)?;
        let h = self.forward_graph(&mut g, &p, x)?;
        Ok(g.value(h).data().to_vec())
    }

    pub fn refine(&self, image: &RasterImage) -> Result<MixtureParams> {
        MixtureParams::from_head(&self.head(image)?, self.config.components)
    }

    /// Runtime shape of the conv features for one blank image.
    pub fn feature_shape_of(&self, image: &RasterImage) -> Result<Vec<usize>> {
        let batch = self.image_batch(&[image])?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(batch)?;
        let f = self.features_graph(&mut g, &p, x)?;
        Ok(g.shape(f).to_vec())
    }
}

/// Per-step hook used while sampling: keeps an incremental raster of the
/// points generated so far and blends the CNN head into the recurrent one.
pub struct RasterRefiner<'a> {
    refiner: &'a CnnRefiner,
    raster: IncrementalRaster,
    seen: usize,
    alpha: f32,
}

impl<'a> RasterRefiner<'a> {
    pub fn new(refiner: &'a CnnRefiner, alpha: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid("blend alpha must lie in [0, 1]"));
        }
        let raster = IncrementalRaster::new(refiner.config.image_size, RASTER_SCALE);
        Ok(RasterRefiner { refiner, raster, seen: 0, alpha })
    }
}

impl HeadRefiner for RasterRefiner<'_> {
    fn refine_head(&mut self, generated: &[Stroke5Point], rnn_head: &[f32]) -> Result<Vec<f32>> {
        for &p in &generated[self.seen..] {
            self.raster.push(p);
        }
        self.seen = generated.len();
        let cnn = self.refiner.head(self.raster.image())?;
        blend(rnn_head, &cnn, self.alpha)
    }
}

/// Sample with the refiner blended in at every step.
pub fn refined_sample(
    baseline: &SketchVae,
    refiner: &CnnRefiner,
    z: &[f32],
    temperature: f32,
    alpha: f32,
    rng: &mut impl Rng,
) -> Result<StrokeSequence> {
    if baseline.config().components != refiner.config.components {
        return Err(Error::invalid("baseline and refiner disagree on mixture component count"));
    }
    let mut hook = RasterRefiner::new(refiner, alpha)?;
    baseline.sample(z, temperature, rng, Some(&mut hook))
}

fn mean_of(g: &mut Graph, terms: &[Var], n: f32) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, 1.0 / n)
}

/// Trains a [`CnnRefiner`] against a frozen baseline on random crops.
///
/// The baseline is only read: its teacher-forced heads (with `z` at the
/// posterior mean of the full sketch) are computed once per training sketch
/// and enter the refiner's graph as constants.
pub struct RefinerTrainer<'a> {
    baseline: &'a SketchVae,
    refiner: CnnRefiner,
    adam: Adam,
    rng: SeededRng,
    data: Vec<StrokeSequence>,
    rnn_rows: Vec<Vec<Vec<f32>>>,
    step: usize,
}

impl<'a> RefinerTrainer<'a> {
    pub fn new(baseline: &'a SketchVae, refiner: CnnRefiner, data: &[StrokeSequence], seed: u64) -> Result<Self> {
        if baseline.config().components != refiner.config.components {
            return Err(Error::invalid("baseline and refiner disagree on mixture component count"));
        }
        if data.is_empty() {
            return Err(Error::data("training split is empty"));
        }
        let s_max = baseline.config().s_max;
        let mut rnn_rows = Vec::with_capacity(data.len());
        for seq in data {
            seq.validate(s_max)?;
            if seq.len() < 2 {
                return Err(Error::data(alloc::format!("sequence `{}` is too short to crop", seq.source_id)));
            }
            let code = baseline.encode(seq, &mut seeded_rng(0))?;
            rnn_rows.push(baseline.teacher_forced_rows(seq, &code.mu)?);
        }
        let adam = Adam::new(refiner.params());
        Ok(RefinerTrainer {
            baseline,
            refiner,
            adam,
            rng: seeded_rng(seed),
            data: data.to_vec(),
            rnn_rows,
            step: 0,
        })
    }

    pub fn refiner(&self) -> &CnnRefiner {
        &self.refiner
    }

    pub fn into_refiner(self) -> CnnRefiner {
        self.refiner
    }

    pub fn baseline(&self) -> &SketchVae {
        self.baseline
    }

    /// Mean blended `L_S + L_P` over `crops` (sketch index, cut point) and the
    /// refiner gradients.
    pub fn crop_gradients(&self, crops: &[(usize, usize)]) -> Result<(f32, f32, Vec<Tensor>)> {
        let cfg = &self.refiner.config;
        let m = cfg.components;
        let s_max = self.baseline.config().s_max;
        let alpha = cfg.blend_alpha;
        let mut images = Vec::with_capacity(crops.len());
        for &(i, cut) in crops {
            let prefix = StrokeSequence::new("prefix", self.data[i].points[..cut].to_vec());
            images.push(render_sized(&prefix, RASTER_SCALE, cfg.image_size));
        }
        let refs: Vec<&RasterImage> = images.iter().collect();
        let batch = self.refiner.image_batch(&refs)?;

        let mut g = Graph::new();
        let p = self.refiner.params.bind(&mut g, true);
        let x = g.constant(batch)?;
        let heads = self.refiner.forward_graph(&mut g, &p, x)?;
        let mut ls_terms = Vec::with_capacity(crops.len());
        let mut lp_terms = Vec::with_capacity(crops.len());
        for (b, &(i, cut)) in crops.iter().enumerate() {
            let steps = s_max - cut;
            let suffix = StrokeSequence::new("suffix", self.data[i].points[cut..].to_vec());
            let rnn: Vec<f32> = self.rnn_rows[i][cut..]
                .iter()
                .flat_map(|row| row.iter().map(|&v| alpha * v))
                .collect();
            let rnn = g.constant(Tensor::new(&[steps, head_size(m)], rnn)?)?;
            let row = g.slice(heads, 0, b, 1)?;
            let cnn = g.repeat_first(row, steps)?;
            let cnn = g.scale(cnn, 1.0 - alpha)?;
            let blended = g.add(rnn, cnn)?;
            let l = sequence_losses(&mut g, blended, &[&suffix], steps, steps, m)?;
            ls_terms.push(l.ls);
            lp_terms.push(l.lp);
        }
        let n = crops.len() as f32;
        let ls = mean_of(&mut g, &ls_terms, n)?;
        let lp = mean_of(&mut g, &lp_terms, n)?;
        let total = g.add(ls, lp)?;
        let grads = g.backward(total)?;
        Ok((g.value(ls).data()[0], g.value(lp).data()[0], p.grads(&grads)))
    }

    fn draw_crops(&mut self) -> Result<Vec<(usize, usize)>> {
        let size = self.refiner.config.batch_size;
        (0..size)
            .map(|_| {
                let i = self.rng.random_range(0..self.data.len());
                let crop = random_crop(&self.data[i], &mut self.rng)?;
                Ok((i, crop.prefix.len()))
            })
            .collect()
    }

    pub fn train_step(&mut self) -> Result<LossRecord> {
        let crops = self.draw_crops()?;
        let step = self.step;
        let (ls, lp, mut grads) = self.crop_gradients(&crops)?;
        let total = ls + lp;
        if !total.is_finite() {
            return Err(Error::Diverged { step });
        }
        if let Some(clip) = self.refiner.config.grad_clip {
            clip_global_norm(&mut grads, clip);
        }
        let lr = self.refiner.config.learning_rate;
        self.adam
            .step(&mut self.refiner.params, &grads, lr)
            .map_err(|e| match e {
                Error::NanGradient(_) => Error::Diverged { step },
                other => other,
            })?;
        self.step += 1;
        Ok(LossRecord { step, ls, lp, kl: 0.0, total })
    }

    pub fn train(&mut self, steps: usize, mut on_record: impl FnMut(&LossRecord)) -> Result<()> {
        for _ in 0..steps {
            let record = self.train_step()?;
            on_record(&record);
        }
        Ok(())
    }
}
