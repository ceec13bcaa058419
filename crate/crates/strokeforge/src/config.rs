//! Flat JSON run configuration shared by every CLI command.

use std::path::Path;

use serde::{Deserialize, Serialize};
use strokeforge_core::discriminator::DiscriminatorConfig;
use strokeforge_core::refiner::RefinerConfig;
use strokeforge_core::stroke::SplitSizes;
use strokeforge_core::tsne::TsneConfig;
use strokeforge_core::vae::VaeConfig;

use crate::error::InputError;

/// Every hyperparameter in one flat object. Keys missing from a file take
/// the desk preset's value; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub s_max: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub validation_size: usize,

    pub components: usize,
    pub latent: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub kl_weight: f32,
    pub baseline_lr: f32,
    pub baseline_batch: usize,
    pub baseline_steps: usize,
    pub baseline_grad_clip: Option<f32>,

    pub refiner_depths: Vec<usize>,
    pub refiner_strides: Vec<usize>,
    pub refiner_dense: [usize; 2],
    pub refiner_image_size: usize,
    pub blend_alpha: f32,
    pub refiner_lr: f32,
    pub refiner_batch: usize,
    pub refiner_steps: usize,
    pub refiner_grad_clip: Option<f32>,

    pub disc_kernels: Vec<usize>,
    pub disc_strides: Vec<usize>,
    pub disc_dense: [usize; 2],
    pub disc_image_size: usize,
    pub disc_channels: usize,
    pub disc_lr: f32,
    pub disc_batch: usize,
    pub disc_epochs: usize,
    pub disc_grad_clip: Option<f32>,
    pub disc_train_per_class: usize,
    pub disc_validation_per_class: usize,

    pub temperature: f32,
    pub tsne_perplexity: f64,
    pub tsne_iterations: usize,
    pub tsne_learning_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    fn from_parts(
        vae: VaeConfig,
        refiner: RefinerConfig,
        disc: DiscriminatorConfig,
        splits: SplitSizes,
        steps: (usize, usize),
        disc_split: (usize, usize),
    ) -> Self {
        let tsne = TsneConfig::default();
        RunConfig {
            seed: 0,
            s_max: vae.s_max,
            train_size: splits.train,
            test_size: splits.test,
            validation_size: splits.validation,
            components: vae.components,
            latent: vae.latent,
            enc_hidden: vae.enc_hidden,
            dec_hidden: vae.dec_hidden,
            kl_weight: vae.kl_weight,
            baseline_lr: vae.learning_rate,
            baseline_batch: vae.batch_size,
            baseline_steps: steps.0,
            baseline_grad_clip: vae.grad_clip,
            refiner_depths: refiner.conv_depths,
            refiner_strides: refiner.conv_strides,
            refiner_dense: refiner.dense_widths,
            refiner_image_size: refiner.image_size,
            blend_alpha: refiner.blend_alpha,
            refiner_lr: refiner.learning_rate,
            refiner_batch: refiner.batch_size,
            refiner_steps: steps.1,
            refiner_grad_clip: refiner.grad_clip,
            disc_kernels: disc.kernels_per_layer,
            disc_strides: disc.strides,
            disc_dense: disc.dense_widths,
            disc_image_size: disc.image_size,
            disc_channels: disc.input_channels,
            disc_lr: disc.learning_rate,
            disc_batch: disc.batch_size,
            disc_epochs: disc.epochs,
            disc_grad_clip: disc.grad_clip,
            disc_train_per_class: disc_split.0,
            disc_validation_per_class: disc_split.1,
            temperature: 1.0,
            tsne_perplexity: tsne.perplexity,
            tsne_iterations: tsne.iterations,
            tsne_learning_rate: tsne.learning_rate,
        }
    }

    /// Full-size architecture and data sizes.
    pub fn full() -> Self {
        Self::from_parts(
            VaeConfig::full(),
            RefinerConfig::full(),
            DiscriminatorConfig::full(),
            SplitSizes::FULL,
            (100_000, 100_000),
            (10_000, 1_000),
        )
    }

    /// Small dimensions that train in minutes on a laptop CPU.
    pub fn desk() -> Self {
        Self::from_parts(
            VaeConfig::desk(),
            RefinerConfig::desk(),
            DiscriminatorConfig::desk(),
            SplitSizes { train: 400, test: 50, validation: 50 },
            (500, 500),
            (80, 20),
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "full" => Some(Self::full()),
            _ => None,
        }
    }

    /// Parse and validate a JSON config.
    pub fn from_json(text: &str) -> Result<Self, InputError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| InputError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, InputError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => InputError::Missing { path: path.to_path_buf() },
            _ => InputError::bad_file(path, e),
        })?;
        Self::from_json(&text).map_err(|e| InputError::bad_file(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), InputError> {
        let bad = |e: strokeforge_core::Error| InputError::Config(e.to_string());
        self.vae().validate().map_err(bad)?;
        self.refiner().validate().map_err(bad)?;
        self.discriminator().validate().map_err(bad)?;
        if self.train_size == 0 {
            return Err(InputError::Config("train_size must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(InputError::Config("temperature must be positive".into()));
        }
        if self.disc_train_per_class < 3 || self.disc_validation_per_class == 0 {
            return Err(InputError::Config(
                "discriminator needs at least 3 training and 1 validation example per class".into(),
            ));
        }
        if !(self.tsne_perplexity > 0.0) || !(self.tsne_learning_rate > 0.0) || self.tsne_iterations == 0 {
            return Err(InputError::Config("t-SNE perplexity, learning rate and iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn splits(&self) -> SplitSizes {
        SplitSizes { train: self.train_size, test: self.test_size, validation: self.validation_size }
    }

    pub fn vae(&self) -> VaeConfig {
        VaeConfig {
            components: self.components,
            latent: self.latent,
            enc_hidden: self.enc_hidden,
            dec_hidden: self.dec_hidden,
            s_max: self.s_max,
            kl_weight: self.kl_weight,
            learning_rate: self.baseline_lr,
            batch_size: self.baseline_batch,
            grad_clip: self.baseline_grad_clip,
        }
    }

    pub fn refiner(&self) -> RefinerConfig {
        RefinerConfig {
            conv_depths: self.refiner_depths.clone(),
            conv_strides: self.refiner_strides.clone(),
            kernel: 3,
            dense_widths: self.refiner_dense,
            image_size: self.refiner_image_size,
            components: self.components,
            blend_alpha: self.blend_alpha,
            learning_rate: self.refiner_lr,
            batch_size: self.refiner_batch,
            grad_clip: self.refiner_grad_clip,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            kernels_per_layer: self.disc_kernels.clone(),
            strides: self.disc_strides.clone(),
            kernel: 3,
            dense_widths: self.disc_dense,
            image_size: self.disc_image_size,
            input_channels: self.disc_channels,
            learning_rate: self.disc_lr,
            batch_size: self.disc_batch,
            epochs: self.disc_epochs,
            grad_clip: self.disc_grad_clip,
        }
    }

    pub fn tsne(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.tsne_perplexity,
            iterations: self.tsne_iterations,
            learning_rate: self.tsne_learning_rate,
            ..TsneConfig::default()
        }
    }
}
