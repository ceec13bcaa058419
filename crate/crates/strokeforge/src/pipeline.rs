//! Training, sampling and corpus assembly used by the CLI commands.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use strokeforge_core::discriminator::{LabeledRaster, SketchClass};
use strokeforge_core::raster::render_sized;
use strokeforge_core::refiner::{refined_sample, CnnRefiner, RefinerTrainer};
use strokeforge_core::stroke::StrokeSequence;
use strokeforge_core::vae::{LossRecord, SketchVae, VaeTrainer};
use strokeforge_core::{seeded_rng, Result};

use crate::config::RunConfig;

pub fn train_baseline(
    train: &[StrokeSequence],
    cfg: &RunConfig,
    steps: usize,
    on_record: impl FnMut(&LossRecord),
) -> Result<SketchVae> {
    let model = SketchVae::new(cfg.vae(), cfg.seed)?;
    let mut trainer = VaeTrainer::new(model, cfg.seed.wrapping_add(1));
    trainer.train(train, steps, on_record)?;
    Ok(trainer.into_model())
}

pub fn train_refiner(
    baseline: &SketchVae,
    train: &[StrokeSequence],
    cfg: &RunConfig,
    steps: usize,
    on_record: impl FnMut(&LossRecord),
) -> Result<CnnRefiner> {
    let refiner = CnnRefiner::new(cfg.refiner(), cfg.seed)?;
    let mut trainer = RefinerTrainer::new(baseline, refiner, train, cfg.seed.wrapping_add(1))?;
    trainer.train(steps, on_record)?;
    Ok(trainer.into_refiner())
}

/// One sketch from the prior. Each index draws from its own generator seeded
/// with `seed + index`, so results do not depend on scheduling.
pub fn sample_one(
    baseline: &SketchVae,
    refiner: Option<&CnnRefiner>,
    alpha: f32,
    temperature: f32,
    seed: u64,
    index: usize,
) -> Result<StrokeSequence> {
    let mut rng = seeded_rng(seed.wrapping_add(index as u64));
    let z = baseline.prior_z(&mut rng);
    let mut seq = match refiner {
        Some(r) => refined_sample(baseline, r, &z, temperature, alpha, &mut rng)?,
        None => baseline.sample(&z, temperature, &mut rng, None)?,
    };
    seq.source_id = format!("sample-{index}");
    Ok(seq)
}

/// `count` sketches generated on the rayon pool.
pub fn sample_many(
    baseline: &SketchVae,
    refiner: Option<&CnnRefiner>,
    count: usize,
    alpha: f32,
    temperature: f32,
    seed: u64,
) -> Result<Vec<StrokeSequence>> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_one(baseline, refiner, alpha, temperature, seed, i))
        .collect()
}

/// Render labeled sketches at `size`. Rendering fits each sketch's own
/// bounding box, so offset normalization does not matter here.
pub fn render_corpus(sets: &[(SketchClass, Vec<StrokeSequence>)], size: usize) -> Vec<LabeledRaster> {
    sets.iter()
        .flat_map(|(class, seqs)| {
            seqs.par_iter()
                .map(|s| LabeledRaster { image: render_sized(s, 1.0, size), class: *class })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Shuffle each class with `seed` and take the first `train_per_class` for
/// training and the next `val_per_class` for validation.
pub fn split_corpus(
    corpus: Vec<LabeledRaster>,
    train_per_class: usize,
    val_per_class: usize,
    seed: u64,
) -> std::result::Result<(Vec<LabeledRaster>, Vec<LabeledRaster>), String> {
    let mut rng = seeded_rng(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in SketchClass::ALL {
        let mut items: Vec<LabeledRaster> = corpus.iter().filter(|r| r.class == class).cloned().collect();
        if items.len() < train_per_class + val_per_class {
            return Err(format!(
                "class {} has {} rasters, need {} training + {} validation",
                class.label(),
                items.len(),
                train_per_class,
                val_per_class
            ));
        }
        items.shuffle(&mut rng);
        val.extend(items.drain(train_per_class..train_per_class + val_per_class));
        items.truncate(train_per_class);
        train.extend(items);
    }
    Ok((train, val))
}
