//! Three-class raster judge: recurrent-model sample, refined sample, or
//! human drawing. Also the confusion matrix it is evaluated with.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{clip_global_norm, Adam, Bound, Conv2d, Dense, Graph, ParamSet, Tensor, Var};
use crate::raster::RasterImage;
use crate::{seeded_rng, Error, Result};

/// Class order used everywhere: rows and columns of the confusion matrix,
/// indices of the probability vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SketchClass {
    SketchRnn,
    Refiner,
    Human,
}

impl SketchClass {
    pub const ALL: [SketchClass; 3] = [SketchClass::SketchRnn, SketchClass::Refiner, SketchClass::Human];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            SketchClass::SketchRnn => "Sketch-RNN",
            SketchClass::Refiner => "Refined",
            SketchClass::Human => "Human",
        }
    }

    /// Parse `sketch-rnn`, `refiner` or `human` (the serialized names).
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sketch-rnn" => Some(SketchClass::SketchRnn),
            "refiner" => Some(SketchClass::Refiner),
            "human" => Some(SketchClass::Human),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub kernels_per_layer: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub dense_widths: [usize; 2],
    pub image_size: usize,
    pub input_channels: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: Option<f32>,
}

impl DiscriminatorConfig {
    pub fn full() -> Self {
        DiscriminatorConfig {
            kernels_per_layer: vec![64, 64, 128, 128, 256, 256],
            strides: vec![1, 2, 1, 2, 1, 2],
            kernel: 3,
            dense_widths: [512, 128],
            image_size: crate::raster::RASTER_SIZE,
            input_channels: 1,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 10,
            grad_clip: Some(5.0),
        }
    }

    pub fn desk() -> Self {
        DiscriminatorConfig {
            kernels_per_layer: vec![8, 8, 16, 16, 32, 32],
            dense_widths: [64, 32],
            image_size: 64,
            batch_size: 16,
            epochs: 8,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels_per_layer.len() != 6 || self.strides.len() != 6 {
            return Err(Error::invalid("discriminator needs exactly six conv layers"));
        }
        if self.kernels_per_layer.iter().chain(&self.strides).any(|&v| v == 0) {
            return Err(Error::invalid("kernel counts and strides must be positive"));
        }
        if self.kernel == 0 || self.image_size == 0 || self.input_channels == 0 || self.batch_size == 0 {
            return Err(Error::invalid("kernel, image_size, input_channels and batch_size must be positive"));
        }
        if self.dense_widths.contains(&0) {
            return Err(Error::invalid("dense widths must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be a finite non-negative number"));
        }
        Ok(())
    }

    fn flat_len(&self) -> usize {
        let side = self.strides.iter().fold(self.image_size, |s, &st| s.div_ceil(st));
        side * side * self.kernels_per_layer[5]
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamSet,
    convs: Vec<Conv2d>,
    hidden1: Dense,
    hidden2: Dense,
    out: Dense,
}

/// Graph handles of a forward pass.
pub struct DiscriminatorOutput {
    pub penultimate: Var,
    pub logits: Var,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let mut convs = Vec::with_capacity(6);
        let mut channels = config.input_channels;
        for (i, (&k, &s)) in config.kernels_per_layer.iter().zip(&config.strides).enumerate() {
            let name = alloc::format!("discriminator.conv{i}");
            convs.push(Conv2d::new(&mut params, &name, channels, k, config.kernel, s, &mut rng));
            channels = k;
        }
        let [w1, w2] = config.dense_widths;
        let hidden1 = Dense::new(&mut params, "discriminator.dense1", config.flat_len(), w1, &mut rng);
        let hidden2 = Dense::new(&mut params, "discriminator.dense2", w1, w2, &mut rng);
        let out = Dense::new(&mut params, "discriminator.head", w2, 3, &mut rng);
        Ok(Discriminator { config, params, convs, hidden1, hidden2, out })
    }

    pub fn from_params(config: DiscriminatorConfig, stored: &ParamSet) -> Result<Self> {
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

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn zero_head(&mut self) {
        self.out.zero(&mut self.params);
    }

    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, images: Var) -> Result<DiscriminatorOutput> {
        let mut x = images;
        for conv in &self.convs {
            let y = conv.forward(g, p, x)?;
            x = g.relu(y)?;
        }
        let b = g.shape(x)[0];
        let flat = g.reshape(x, &[b, self.config.flat_len()])?;
        let d1 = self.hidden1.forward(g, p, flat)?;
        let d1 = g.elu(d1)?;
        let d2 = self.hidden2.forward(g, p, d1)?;
        let penultimate = g.elu(d2)?;
        let logits = self.out.forward(g, p, penultimate)?;
        Ok(DiscriminatorOutput { penultimate, logits })
    }

    pub fn image_batch(&self, images: &[&RasterImage]) -> Result<Tensor> {
        let (c, s) = (self.config.input_channels, self.config.image_size);
        let mut data = Vec::with_capacity(images.len() * c * s * s);
        for img in images {
            if img.size() != s {
                return Err(Error::ShapeMismatch {
                    op: "classify",
                    left: vec![s, s],
                    right: vec![img.size(), img.size()],
                });
            }
            data.extend_from_slice(img.to_tensor(c).data());
        }
        Tensor::new(&[images.len(), c, s, s], data)
    }

    fn run(&self, images: &[&RasterImage]) -> Result<(Vec<[f32; 3]>, Vec<Vec<f32>>)> {
        let batch = self.image_batch(images)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(batch)?;
        let out = self.forward_graph(&mut g, &p, x)?;
        let probs = g.softmax(out.logits)?;
        let rows = g.value(probs).data().chunks(3).map(|r| [r[0], r[1], r[2]]).collect();
        let feats = crate::autograd::rows_of(&g, out.penultimate);
        Ok((rows, feats))
    }

    /// Class probabilities in [`SketchClass`] order.
    pub fn classify(&self, image: &RasterImage) -> Result<[f32; 3]> {
        Ok(self.run(&[image])?.0[0])
    }

    pub fn classify_batch(&self, images: &[&RasterImage]) -> Result<Vec<[f32; 3]>> {
        Ok(self.run(images)?.0)
    }

    pub fn predict(&self, image: &RasterImage) -> Result<SketchClass> {
        let probs = self.classify(image)?;
        Ok(SketchClass::ALL[argmax(&probs)])
    }

    /// Activations of the last hidden dense layer, one row per image.
    pub fn penultimate(&self, images: &[&RasterImage]) -> Result<Vec<Vec<f32>>> {
        Ok(self.run(images)?.1)
    }
}

/// A raster with its true class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRaster {
    pub image: RasterImage,
    pub class: SketchClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f32,
    pub val_accuracy: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    /// Final validation accuracy per class, `None` for a class absent from validation.
    pub per_class_accuracy: [Option<f32>; 3],
    pub val_accuracy: f32,
}

fn check_classes(set: &[LabeledRaster], min: usize, what: &str) -> Result<()> {
    for class in SketchClass::ALL {
        let n = set.iter().filter(|r| r.class == class).count();
        if n < min {
            return Err(Error::data(alloc::format!(
                "{what} has {n} examples of class {}, need at least {min}",
                class.label()
            )));
        }
    }
    Ok(())
}

/// Predictions for a labeled set, in order.
pub fn predict_all(model: &Discriminator, set: &[LabeledRaster], batch: usize) -> Result<Vec<SketchClass>> {
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.chunks(batch.max(1)) {
        let imgs: Vec<&RasterImage> = chunk.iter().map(|r| &r.image).collect();
        for probs in model.classify_batch(&imgs)? {
            out.push(SketchClass::ALL[argmax(&probs)]);
        }
    }
    Ok(out)
}

/// Cross-entropy training with Adam over shuffled mini-batches, scoring the
/// validation set after every epoch.
pub fn train_discriminator(
    config: DiscriminatorConfig,
    train: &[LabeledRaster],
    validation: &[LabeledRaster],
    seed: u64,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(Discriminator, TrainReport)> {
    check_classes(train, 3, "training set")?;
    if validation.is_empty() {
        return Err(Error::data("validation set is empty"));
    }
    let mut model = Discriminator::new(config.clone(), seed)?;
    let mut adam = Adam::new(model.params());
    let mut rng = seeded_rng(seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f32;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let imgs: Vec<&RasterImage> = chunk.iter().map(|&i| &train[i].image).collect();
            let batch = model.image_batch(&imgs)?;
            let mut onehot = vec![0.0f32; chunk.len() * 3];
            for (r, &i) in chunk.iter().enumerate() {
                onehot[r * 3 + train[i].class.index()] = 1.0;
            }
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, true);
            let x = g.constant(batch)?;
            let out = model.forward_graph(&mut g, &p, x)?;
            let logp = g.log_softmax(out.logits)?;
            let t = g.constant(Tensor::new(&[chunk.len(), 3], onehot)?)?;
            let picked = g.mul(logp, t)?;
            let sum = g.sum(picked)?;
            let loss = g.scale(sum, -1.0 / chunk.len() as f32)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged { step });
            }
            let grads = g.backward(loss)?;
            let mut grads = p.grads(&grads);
            drop(g);
            if let Some(c) = config.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            adam.step(&mut model.params, &grads, config.learning_rate)
                .map_err(|e| match e {
                    Error::NanGradient(_) => Error::Diverged { step },
                    other => other,
                })?;
            loss_sum += value;
            batches += 1;
            step += 1;
        }
        let preds = predict_all(&model, validation, config.batch_size)?;
        let correct = preds.iter().zip(validation).filter(|(p, r)| **p == r.class).count();
        let report = EpochReport {
            epoch,
            mean_loss: loss_sum / batches.max(1) as f32,
            val_accuracy: correct as f32 / validation.len() as f32,
        };
        on_epoch(&report);
        epochs.push(report);
    }
    let preds = predict_all(&model, validation, config.batch_size)?;
    let matrix = ConfusionMatrix::from_predictions(validation.iter().map(|r| r.class).zip(preds.iter().copied()));
    let per_class_accuracy = [0, 1, 2].map(|c| matrix.percent(c, c).map(|p| p / 100.0));
    let val_accuracy = matrix.accuracy().unwrap_or(0.0);
    Ok((model, TrainReport { epochs, per_class_accuracy, val_accuracy }))
}

/// Counts of (true class, predicted class).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_predictions(pairs: impl IntoIterator<Item = (SketchClass, SketchClass)>) -> Self {
        let mut m = ConfusionMatrix::default();
        for (t, p) in pairs {
            m.counts[t.index()][p.index()] += 1;
        }
        m
    }

    pub fn row_total(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    /// Whether the true class of `row` occurs at all.
    pub fn has_row(&self, row: usize) -> bool {
        self.row_total(row) > 0
    }

    /// Row-normalized percentage, `None` for an empty row.
    pub fn percent(&self, row: usize, col: usize) -> Option<f32> {
        let total = self.row_total(row);
        (total > 0).then(|| (self.counts[row][col] as f64 * 100.0 / total as f64) as f32)
    }

    pub fn percent_row(&self, row: usize) -> Option<[f32; 3]> {
        self.has_row(row).then(|| [0, 1, 2].map(|c| self.percent(row, c).unwrap_or(0.0)))
    }

    /// Share (in percent) of `generated` sketches the judge called human.
    pub fn mislead_rate(&self, generated: SketchClass) -> Option<f32> {
        self.percent(generated.index(), SketchClass::Human.index())
    }

    /// Overall fraction correct.
    pub fn accuracy(&self) -> Option<f32> {
        let total: u64 = (0..3).map(|r| self.row_total(r)).sum();
        let diag: u64 = (0..3).map(|i| self.counts[i][i]).sum();
        (total > 0).then(|| diag as f32 / total as f32)
    }
}
