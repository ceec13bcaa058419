//! Deterministic synthetic fixtures: cat-like stroke sketches for the
//! generative models and a three-shape raster corpus for the discriminator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use core::f32::consts::TAU;
use rand::Rng;

use crate::discriminator::{LabeledRaster, SketchClass};
use crate::raster::render_sized;
use crate::seeded_rng;
use crate::stroke::StrokeSequence;

fn ellipse(cx: f32, cy: f32, rx: f32, ry: f32, n: usize, jitter: f32, rng: &mut impl Rng) -> Vec<(f32, f32)> {
    let start = rng.random_range(0.0..TAU);
    (0..=n)
        .map(|k| {
            let a = start + k as f32 / n as f32 * TAU;
            let j = if k == 0 || k == n { 0.0 } else { jitter };
            (
                cx + rx * libm::cosf(a) + rng.random_range(-1.0..=1.0) * j,
                cy + ry * libm::sinf(a) + rng.random_range(-1.0..=1.0) * j,
            )
        })
        .collect()
}

/// Cat faces in raw drawing units (roughly a 200-unit canvas, y down): a head
/// outline, two ears, two eyes and a few whiskers, 25 to 35 points each.
pub fn cat_sketches(count: usize, seed: u64) -> Vec<StrokeSequence> {
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|i| {
            let cx = rng.random_range(90.0..110.0f32);
            let cy = rng.random_range(100.0..120.0f32);
            let rx = rng.random_range(45.0..60.0f32);
            let ry = rx * rng.random_range(0.8..1.0f32);
            let jit = 2.0;
            let mut strokes = vec![ellipse(cx, cy, rx, ry, rng.random_range(10..14), jit, &mut rng)];
            for side in [-1.0f32, 1.0] {
                let base_in = cx + side * rx * 0.2;
                let base_out = cx + side * rx * 0.75;
                let top = cy - ry - rng.random_range(20.0..35.0);
                let tip_x = cx + side * rx * rng.random_range(0.45..0.7);
                let base_y = cy - ry * 0.7;
                strokes.push(vec![(base_in, base_y - ry * 0.25), (tip_x, top), (base_out, base_y)]);
            }
            for side in [-1.0f32, 1.0] {
                let ex = cx + side * rx * 0.4;
                let ey = cy - ry * 0.15;
                let w = rng.random_range(4.0..8.0f32);
                strokes.push(vec![(ex - w, ey), (ex + w, ey + rng.random_range(-1.0..1.0))]);
            }
            let whiskers = rng.random_range(1..=3usize);
            for side in [-1.0f32, 1.0] {
                for k in 0..whiskers {
                    let y0 = cy + ry * 0.25 + k as f32 * 6.0;
                    let x0 = cx + side * rx * 0.2;
                    let x1 = cx + side * (rx + rng.random_range(5.0..20.0));
                    let y1 = y0 + (k as f32 - 1.0) * rng.random_range(3.0..8.0);
                    strokes.push(vec![(x0, y0), (x1, y1)]);
                }
            }
            StrokeSequence::from_polylines(format!("cat-{i}"), &strokes)
                .expect("synthetic drawing has points")
        })
        .collect()
}

/// One shape per class: circles for [`SketchClass::SketchRnn`], single
/// straight lines for [`SketchClass::Refiner`], two-stroke crosses for
/// [`SketchClass::Human`]. Position, size, angle and jitter vary per image.
pub fn shape_sketch(class: SketchClass, index: usize, rng: &mut impl Rng) -> StrokeSequence {
    let cx = rng.random_range(-20.0..20.0f32);
    let cy = rng.random_range(-20.0..20.0f32);
    let r = rng.random_range(20.0..60.0f32);
    let angle = rng.random_range(0.0..TAU);
    let strokes = match class {
        SketchClass::SketchRnn => {
            let aspect = rng.random_range(0.7..1.0f32);
            vec![ellipse(cx, cy, r, r * aspect, 20, r * 0.03, rng)]
        }
        SketchClass::Refiner => {
            let (c, s) = (libm::cosf(angle), libm::sinf(angle));
            vec![vec![(cx - r * c, cy - r * s), (cx + r * c, cy + r * s)]]
        }
        SketchClass::Human => {
            let mut strokes = Vec::with_capacity(2);
            for a in [angle, angle + TAU / 4.0 + rng.random_range(-0.3..0.3)] {
                let (c, s) = (libm::cosf(a), libm::sinf(a));
                strokes.push(vec![(cx - r * c, cy - r * s), (cx + r * c, cy + r * s)]);
            }
            strokes
        }
    };
    StrokeSequence::from_polylines(format!("{}-{index}", class.label()), &strokes)
        .expect("synthetic shape has points")
}

/// `per_class` rendered shapes of each class, interleaved by class.
pub fn shape_rasters(per_class: usize, size: usize, seed: u64) -> Vec<LabeledRaster> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(per_class * 3);
    for i in 0..per_class {
        for class in SketchClass::ALL {
            let sketch = shape_sketch(class, i, &mut rng);
            out.push(LabeledRaster { image: render_sized(&sketch, 1.0, size), class });
        }
    }
    out
}
