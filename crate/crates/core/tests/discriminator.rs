mod support;

use rand::seq::SliceRandom;
use strokeforge_core::discriminator::{
    argmax, train_discriminator, ConfusionMatrix, Discriminator, DiscriminatorConfig, LabeledRaster, SketchClass,
};
use strokeforge_core::raster::RasterImage;
use strokeforge_core::synthetic::shape_rasters;

fn small_config() -> DiscriminatorConfig {
    DiscriminatorConfig {
        kernels_per_layer: vec![4, 4, 8, 8, 16, 16],
        dense_widths: [32, 16],
        image_size: 32,
        batch_size: 16,
        epochs: 6,
        ..DiscriminatorConfig::desk()
    }
}

fn random_image(size: usize, seed: u64) -> RasterImage {
    use rand::Rng;
    let mut r = support::rng(seed);
    let data = (0..size * size).map(|_| if r.random_bool(0.1) { 1.0 } else { 0.0 }).collect();
    RasterImage::from_values(size, data).unwrap()
}

#[test]
fn probabilities_sum_to_one() {
    let model = Discriminator::new(small_config(), 3).unwrap();
    for seed in 0..5 {
        let p = model.classify(&random_image(32, seed)).unwrap();
        let sum: f64 = p.iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
        assert!(p.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn zero_head_is_uniform() {
    let mut model = Discriminator::new(small_config(), 3).unwrap();
    model.zero_head();
    let p = model.classify(&random_image(32, 9)).unwrap();
    for v in p {
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
    }
}

#[test]
fn ties_go_to_lowest_class() {
    assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    assert_eq!(argmax(&[0.5, 0.5, 0.0]), 0);
    assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);

    // A zero head weight with equal biases on two classes forces an exact
    // tie in the logits, whatever the image.
    let mut model = Discriminator::new(small_config(), 5).unwrap();
    model.zero_head();
    let id = model.params().find("discriminator.head.bias").unwrap();
    model.params_mut().get_mut(id).data_mut().copy_from_slice(&[-1.0, 2.0, 2.0]);
    for seed in 0..3 {
        let img = random_image(32, seed);
        let p = model.classify(&img).unwrap();
        assert_eq!(p[1], p[2]);
        assert_eq!(model.predict(&img).unwrap(), SketchClass::Refiner);
    }
}

#[test]
fn classify_is_deterministic() {
    let model = Discriminator::new(small_config(), 11).unwrap();
    let img = random_image(32, 1);
    assert_eq!(model.classify(&img).unwrap(), model.classify(&img).unwrap());
    let clone = Discriminator::from_params(small_config(), model.params()).unwrap();
    assert_eq!(model.classify(&img).unwrap(), clone.classify(&img).unwrap());
}

#[test]
fn wrong_image_size_is_rejected() {
    let model = Discriminator::new(small_config(), 1).unwrap();
    assert!(model.classify(&RasterImage::blank(16)).is_err());
}

#[test]
fn full_config_validates() {
    let c = DiscriminatorConfig::full();
    c.validate().unwrap();
    assert_eq!(c.kernels_per_layer, vec![64, 64, 128, 128, 256, 256]);
    assert_eq!(c.strides, vec![1, 2, 1, 2, 1, 2]);
    let mut bad = c.clone();
    bad.strides.pop();
    assert!(bad.validate().is_err());
}

#[test]
fn penultimate_width_matches_config() {
    let model = Discriminator::new(small_config(), 2).unwrap();
    let imgs = [random_image(32, 1), random_image(32, 1)];
    let refs: Vec<&RasterImage> = imgs.iter().collect();
    let f = model.penultimate(&refs).unwrap();
    assert_eq!(f.len(), 2);
    assert_eq!(f[0].len(), 16);
    assert_eq!(f[0], f[1]);
}

#[test]
fn perfect_predictions_give_identity() {
    let pairs = SketchClass::ALL.iter().flat_map(|&c| std::iter::repeat((c, c)).take(7));
    let m = ConfusionMatrix::from_predictions(pairs);
    for r in 0..3 {
        let row = m.percent_row(r).unwrap();
        for c in 0..3 {
            assert_eq!(row[c], if r == c { 100.0 } else { 0.0 });
        }
    }
    assert_eq!(m.accuracy(), Some(1.0));
}

#[test]
fn single_class_eval_leaves_other_rows_absent() {
    let m = ConfusionMatrix::from_predictions([
        (SketchClass::Human, SketchClass::Human),
        (SketchClass::Human, SketchClass::Refiner),
    ]);
    assert!(m.has_row(2));
    assert!(!m.has_row(0) && !m.has_row(1));
    assert_eq!(m.percent_row(0), None);
    assert_eq!(m.percent_row(2), Some([0.0, 50.0, 50.0]));
    assert_eq!(m.mislead_rate(SketchClass::SketchRnn), None);
}

#[test]
fn mislead_rate_is_the_human_column() {
    let mut pairs = Vec::new();
    for (t, p, n) in [(0, 0, 5), (0, 2, 3), (0, 1, 2), (1, 2, 1), (1, 1, 3)] {
        for _ in 0..n {
            pairs.push((SketchClass::ALL[t], SketchClass::ALL[p]));
        }
    }
    let m = ConfusionMatrix::from_predictions(pairs);
    assert_eq!(m.mislead_rate(SketchClass::SketchRnn), m.percent(0, 2));
    assert_eq!(m.mislead_rate(SketchClass::SketchRnn), Some(30.0));
    assert_eq!(m.mislead_rate(SketchClass::Refiner), Some(25.0));
}

#[test]
fn missing_class_is_rejected() {
    let data: Vec<LabeledRaster> = shape_rasters(4, 32, 1)
        .into_iter()
        .filter(|r| r.class != SketchClass::Human)
        .collect();
    let err = train_discriminator(small_config(), &data, &data, 0, |_| {});
    assert!(err.is_err());
}

#[test]
fn learns_separable_shapes() {
    let train = shape_rasters(100, 32, 21);
    let val = shape_rasters(30, 32, 22);
    let (model, report) = train_discriminator(small_config(), &train, &val, 4, |_| {}).unwrap();
    assert!(report.val_accuracy >= 0.9, "validation accuracy {}", report.val_accuracy);
    let preds = strokeforge_core::discriminator::predict_all(&model, &val, 32).unwrap();
    let m = ConfusionMatrix::from_predictions(val.iter().map(|r| r.class).zip(preds));
    for r in 0..3 {
        let sum: f32 = m.percent_row(r).unwrap().iter().sum();
        assert!((sum - 100.0).abs() < 0.1);
    }
}

fn shuffle_labels(set: &mut [LabeledRaster], seed: u64) {
    let mut labels: Vec<SketchClass> = set.iter().map(|r| r.class).collect();
    labels.shuffle(&mut support::rng(seed));
    for (r, l) in set.iter_mut().zip(labels) {
        r.class = l;
    }
}

// Both splits get independently permuted labels, so nothing the model learns
// about an image carries over to its validation label.
#[test]
fn shuffled_labels_stay_near_chance() {
    let mut train = shape_rasters(100, 32, 31);
    shuffle_labels(&mut train, 7);
    let mut val = shape_rasters(100, 32, 32);
    shuffle_labels(&mut val, 8);
    let (_, report) = train_discriminator(small_config(), &train, &val, 4, |_| {}).unwrap();
    assert!(
        (report.val_accuracy - 1.0 / 3.0).abs() <= 0.10,
        "validation accuracy {}",
        report.val_accuracy
    );
}
