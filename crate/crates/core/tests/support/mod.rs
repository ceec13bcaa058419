#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strokeforge_core::autograd::{Graph, Tensor, Var};
use strokeforge_core::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], scale: f32, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Keep values at least `gap` away from zero so kinked activations are not
/// straddled by the finite-difference step.
pub fn away_from_zero(mut t: Tensor, gap: f32) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap } else { gap };
        }
    }
    t
}

/// Central finite-difference check of `f` with respect to every input.
///
/// The scalar probed is `sum(f(inputs) ⊙ R)` for a fixed random `R`, with the
/// projection done in f64 outside the graph. Returns the worst relative error
/// `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)` across inputs.
pub fn grad_check<F>(inputs: &[Tensor], eps: f32, seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone()).unwrap()).collect();
    let out = f(&mut g, &vars).unwrap();
    let out_shape = g.shape(out).to_vec();
    let mut r = rng(seed);
    let proj = random_tensor(&out_shape, 1.0, &mut r);
    let proj_var = g.constant(proj.clone()).unwrap();
    let prod = g.mul(out, proj_var).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone()).unwrap()).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out)
            .data()
            .iter()
            .zip(proj.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };

    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let mut numeric = vec![0.0f64; inputs[k].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= eps;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * eps as f64);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| (a as f64 - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.data().iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let rel = if denom < 1e-12 { diff } else { diff / denom };
        worst = worst.max(rel);
    }
    worst
}

/// Small two-stroke sketches (a jittered polygon plus a tail), normalized so
/// offsets have roughly unit spread.
pub fn toy_sketches(count: usize, seed: u64) -> Vec<strokeforge_core::stroke::StrokeSequence> {
    use strokeforge_core::stroke::StrokeSequence;
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let sides = 3 + i % 4;
            let radius = r.random_range(20.0..40.0f32);
            let (cx, cy) = (r.random_range(-5.0..5.0f32), r.random_range(-5.0..5.0f32));
            let mut poly: Vec<(f32, f32)> = (0..=sides)
                .map(|k| {
                    let a = k as f32 / sides as f32 * std::f32::consts::TAU;
                    (cx + radius * a.cos(), cy + radius * a.sin())
                })
                .collect();
            for p in poly.iter_mut().skip(1) {
                p.0 += r.random_range(-2.0..2.0);
                p.1 += r.random_range(-2.0..2.0);
            }
            let tail: Vec<(f32, f32)> = (0..3)
                .map(|k| (cx + k as f32 * 8.0, cy + radius + 5.0 + r.random_range(-2.0..2.0)))
                .collect();
            StrokeSequence::from_polylines(format!("toy-{i}"), &[poly, tail])
                .unwrap()
                .scaled(1.0 / 20.0)
        })
        .collect()
}
