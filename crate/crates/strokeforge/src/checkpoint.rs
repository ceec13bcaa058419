//! Model checkpoint files: the core `SFCKPT1` encoding with the model's
//! config stored as JSON in the metadata blob.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use strokeforge_core::autograd::{checkpoint, ParamSet};
use strokeforge_core::discriminator::{Discriminator, DiscriminatorConfig};
use strokeforge_core::refiner::{CnnRefiner, RefinerConfig};
use strokeforge_core::vae::{SketchVae, VaeConfig};

use crate::error::InputError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelMeta {
    Baseline { config: VaeConfig, offset_scale: f32 },
    Refiner { config: RefinerConfig },
    Discriminator { config: DiscriminatorConfig },
}

impl ModelMeta {
    fn kind(&self) -> &'static str {
        match self {
            ModelMeta::Baseline { .. } => "baseline",
            ModelMeta::Refiner { .. } => "refiner",
            ModelMeta::Discriminator { .. } => "discriminator",
        }
    }
}

pub fn save(path: &Path, params: &ParamSet, meta: &ModelMeta) -> anyhow::Result<()> {
    let blob = checkpoint::encode(params, &serde_json::to_string(meta)?);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, blob).with_context(|| format!("writing {}", path.display()))
}

pub fn load(path: &Path) -> anyhow::Result<(ParamSet, ModelMeta)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(InputError::Missing { path: path.to_path_buf() }.into())
        }
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    let (params, meta) = checkpoint::decode(&bytes).map_err(|e| InputError::bad_file(path, e))?;
    let meta: ModelMeta = serde_json::from_str(&meta).map_err(|e| InputError::bad_file(path, e))?;
    Ok((params, meta))
}

fn wrong_kind(path: &Path, want: &str, got: &ModelMeta) -> anyhow::Error {
    InputError::bad_file(path, format!("expected a {want} checkpoint, found {}", got.kind())).into()
}

pub fn save_baseline(path: &Path, model: &SketchVae, offset_scale: f32) -> anyhow::Result<()> {
    save(path, model.params(), &ModelMeta::Baseline { config: model.config().clone(), offset_scale })
}

/// The baseline model and the offset scale of the data it was trained on.
pub fn load_baseline(path: &Path) -> anyhow::Result<(SketchVae, f32)> {
    match load(path)? {
        (params, ModelMeta::Baseline { config, offset_scale }) => {
            let model = SketchVae::from_params(config, &params).map_err(|e| InputError::bad_file(path, e))?;
            Ok((model, offset_scale))
        }
        (_, other) => Err(wrong_kind(path, "baseline", &other)),
    }
}

pub fn save_refiner(path: &Path, model: &CnnRefiner) -> anyhow::Result<()> {
    save(path, model.params(), &ModelMeta::Refiner { config: model.config().clone() })
}

pub fn load_refiner(path: &Path) -> anyhow::Result<CnnRefiner> {
    match load(path)? {
        (params, ModelMeta::Refiner { config }) => {
            Ok(CnnRefiner::from_params(config, &params).map_err(|e| InputError::bad_file(path, e))?)
        }
        (_, other) => Err(wrong_kind(path, "refiner", &other)),
    }
}

pub fn save_discriminator(path: &Path, model: &Discriminator) -> anyhow::Result<()> {
    save(path, model.params(), &ModelMeta::Discriminator { config: model.config().clone() })
}

pub fn load_discriminator(path: &Path) -> anyhow::Result<Discriminator> {
    match load(path)? {
        (params, ModelMeta::Discriminator { config }) => {
            Ok(Discriminator::from_params(config, &params).map_err(|e| InputError::bad_file(path, e))?)
        }
        (_, other) => Err(wrong_kind(path, "discriminator", &other)),
    }
}
