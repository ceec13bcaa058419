//! Exact t-SNE and statistics over the resulting 2-D embedding.

use alloc::vec;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::math::{exp64, ln64, sqrt64};
use crate::raster::RasterImage;
use crate::{seeded_rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    /// Allowed gap between a row's entropy and `ln(perplexity)`.
    pub entropy_tol: f64,
    pub max_search_steps: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            entropy_tol: 1e-4,
            max_search_steps: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRun {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub points: Vec<[f64; 2]>,
    /// `KL(P || Q)` after each iteration, measured against the unexaggerated `P`.
    pub kl_trace: Vec<f64>,
    /// Rows whose bandwidth search stopped at the step limit.
    pub search_fallbacks: usize,
}

/// Affinities of each point to the others after the bandwidth search.
#[derive(Clone, Debug, PartialEq)]
pub struct Affinities {
    /// Symmetric `N × N` joint probabilities, summing to 1.
    pub p: Vec<f64>,
    /// Entropy (nats) of each conditional row.
    pub entropies: Vec<f64>,
    pub fallbacks: usize,
}

/// Four partial sums so the loop vectorizes.
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = squared_distance(&x[i], &x[j]);
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional row `p_{j|i}` for precision `beta`, and its entropy.
fn conditional_row(d: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let n = row.len();
    let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for j in 0..n {
        if j == i {
            row[j] = 0.0;
            continue;
        }
        let shifted = d[j] - dmin;
        let v = exp64(-beta * shifted);
        row[j] = v;
        sum += v;
        weighted += v * shifted;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    ln64(sum) + beta * weighted / sum
}

/// Gaussian affinities with a per-point precision found by bisection so each
/// row's entropy matches `ln(perplexity)`.
pub fn affinities(features: &[Vec<f64>], perplexity: f64, tol: f64, max_steps: usize) -> Affinities {
    let n = features.len();
    let d = squared_distances(features);
    let target = ln64(perplexity);
    let mut cond = vec![0.0; n * n];
    let mut entropies = vec![0.0; n];
    let mut fallbacks = 0;
    for i in 0..n {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let row_d = &d[i * n..(i + 1) * n];
        let row = &mut cond[i * n..(i + 1) * n];
        let mut h = conditional_row(row_d, i, beta, row);
        let mut steps = 0;
        while (h - target).abs() > tol {
            if steps == max_steps {
                fallbacks += 1;
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = conditional_row(row_d, i, beta, row);
            steps += 1;
        }
        entropies[i] = h;
    }
    let mut p = vec![0.0; n * n];
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / norm;
        }
    }
    Affinities { p, entropies, fallbacks }
}

/// Fill the upper triangle of `num` with `1 / (1 + |y_i - y_j|²)` and return
/// the sum over all ordered pairs.
fn student_kernel(points: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = points.len();
    let mut sum = 0.0;
    for i in 0..n {
        let row = &mut num[i * n..(i + 1) * n];
        for j in i + 1..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            row[j] = k;
            sum += k;
        }
    }
    2.0 * sum
}

/// Student-t joint similarities of a 2-D embedding; also returns the
/// unnormalized kernel `1 / (1 + |y_i - y_j|²)`.
pub fn student_q(points: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let n = points.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = k;
            num[j * n + i] = k;
            sum += 2.0 * k;
        }
    }
    let q = num.iter().map(|k| k / sum).collect();
    (q, num)
}

/// `KL(P || Q)` summed over pairs with `p > 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * ln64(p / q.max(1e-300)))
        .sum()
}

/// Copy of the rows with exact duplicates nudged apart by `1e-8`-scale noise.
fn jitter_duplicates(features: &[Vec<f32>], rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = features.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    // FNV-1a over the bit patterns (+0.0 folds -0.0 into 0.0); full rows are
    // compared only on a hash match
    let hash = |r: &[f64]| r.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ (v + 0.0).to_bits()).wrapping_mul(0x100_0000_01b3));
    let mut seen: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for i in 0..rows.len() {
        loop {
            let h = hash(&rows[i]);
            let duplicate = seen.get(&h).is_some_and(|ids| ids.iter().any(|&j| rows[j] == rows[i]));
            if !duplicate {
                seen.entry(h).or_default().push(i);
                break;
            }
            for v in rows[i].iter_mut() {
                *v += 1e-8 * rng.random_range(-1.0..1.0);
            }
        }
    }
    rows
}

/// Embed `features` (one row per point) into 2-D.
pub fn tsne(features: &[Vec<f32>], config: &TsneConfig, seed: u64) -> Result<EmbeddingRun> {
    let n = features.len();
    if n < 10 {
        return Err(Error::invalid(alloc::format!("t-SNE needs at least 10 points, got {n}")));
    }
    let dim = features[0].len();
    if dim < 2 || features.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid("t-SNE features must share a dimension of at least 2"));
    }
    if !(config.perplexity > 0.0) || config.perplexity >= n as f64 / 3.0 {
        return Err(Error::invalid(alloc::format!(
            "perplexity {} must be positive and below N/3 = {:.3}",
            config.perplexity,
            n as f64 / 3.0
        )));
    }
    let mut rng = seeded_rng(seed);
    let rows = jitter_duplicates(features, &mut rng);
    let aff = affinities(&rows, config.perplexity, config.entropy_tol, config.max_search_steps);
    let p = aff.p;

    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [1e-4 * a, 1e-4 * b]
        })
        .collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(config.iterations);
    // KL(P || Q) = Σ p ln p − Σ p ln num + ln Z · Σ p, over pairs with p > 0
    let (mut p_ln_p, mut p_mass) = (0.0, 0.0);
    for &v in p.iter().filter(|&&v| v > 0.0) {
        p_ln_p += v * ln64(v);
        p_mass += v;
    }
    let mut num = vec![0.0; n * n];
    let mut z = student_kernel(&y, &mut num);
    for it in 0..config.iterations {
        let exag = if it < config.exaggeration_iters { config.exaggeration } else { 1.0 };
        let momentum = if it < config.momentum_switch { config.initial_momentum } else { config.final_momentum };
        grad.iter_mut().for_each(|g| *g = [0.0; 2]);
        for i in 0..n {
            let yi = y[i];
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in i + 1..n {
                let k = i * n + j;
                let f = 4.0 * (exag * p[k] - num[k] / z) * num[k];
                let (dx, dy) = (f * (yi[0] - y[j][0]), f * (yi[1] - y[j][1]));
                gx += dx;
                gy += dy;
                grad[j][0] -= dx;
                grad[j][1] -= dy;
            }
            grad[i][0] += gx;
            grad[i][1] += gy;
        }
        for i in 0..n {
            for a in 0..2 {
                let same_sign = (grad[i][a] > 0.0) == (update[i][a] > 0.0);
                gains[i][a] = if same_sign { gains[i][a] * 0.8 } else { gains[i][a] + 0.2 };
                gains[i][a] = gains[i][a].max(0.01);
                update[i][a] = momentum * update[i][a] - config.learning_rate * gains[i][a] * grad[i][a];
            }
            y[i][0] += update[i][0];
            y[i][1] += update[i][1];
        }
        let mean = y.iter().fold([0.0, 0.0], |m, p| [m[0] + p[0], m[1] + p[1]]);
        for p in y.iter_mut() {
            p[0] -= mean[0] / n as f64;
            p[1] -= mean[1] / n as f64;
        }
        if y.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFinite { op: "tsne" });
        }
        z = student_kernel(&y, &mut num);
        let mut p_ln_num = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let k = i * n + j;
                if p[k] > 0.0 {
                    p_ln_num += p[k] * ln64(num[k]);
                }
            }
        }
        kl_trace.push(p_ln_p - 2.0 * p_ln_num + ln64(z) * p_mass);
    }
    Ok(EmbeddingRun {
        perplexity: config.perplexity,
        iterations: config.iterations,
        learning_rate: config.learning_rate,
        points: y,
        kl_trace,
        search_fallbacks: aff.fallbacks,
    })
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    sqrt64((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]))
}

/// Mean silhouette coefficient of labeled 2-D points. Points in singleton
/// clusters score 0.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(Error::invalid("silhouette needs one label per point"));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[labels[j]] += dist(p, q);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    Ok(total / points.len() as f64)
}

/// Mean pairwise Euclidean distance between embedded points carrying `label`;
/// `None` with fewer than two such points.
pub fn mean_pairwise_distance(points: &[[f64; 2]], labels: &[usize], label: usize) -> Option<f64> {
    let members: Vec<&[f64; 2]> = points.iter().zip(labels).filter(|(_, &l)| l == label).map(|(p, _)| p).collect();
    let m = members.len();
    if m < 2 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            sum += dist(members[i], members[j]);
        }
    }
    Some(sum / (m * (m - 1) / 2) as f64)
}

/// Flattened raster pixels, one row per image.
pub fn flat_features(images: &[&RasterImage]) -> Vec<Vec<f32>> {
    images.iter().map(|img| img.data().to_vec()).collect()
}
