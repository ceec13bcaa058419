//! Reference oracle for the full refiner gradient check.

use rand::Rng;
use strokeforge_core::autograd::{Graph, ParamSet, Tensor};
use strokeforge_core::mixture::head_size;
use strokeforge_core::raster::RasterImage;
use strokeforge_core::refiner::{CnnRefiner, RefinerConfig};

use super::rng;

/// Independent f64 forward pass of the refiner read straight from its
/// parameters. With `mask` given, every ReLU uses that on/off pattern instead
/// of the sign of its input; otherwise the pattern is recorded into `record`.
fn reference_forward(
    config: &RefinerConfig,
    params: &ParamSet,
    image: &[f64],
    mask: Option<&[bool]>,
    record: &mut Vec<bool>,
) -> Vec<f64> {
    let get = |name: &str| -> Vec<f64> {
        let id = params.find(name).unwrap_or_else(|| panic!("missing {name}"));
        params.get(id).data().iter().map(|&v| v as f64).collect()
    };
    let mut unit = 0usize;
    let mut x = image.to_vec();
    let (mut c, mut side) = (config.conv_depths[0], config.image_size);
    for i in 0..6 {
        let (out_c, stride) = (config.conv_depths[i], config.conv_strides[i]);
        let k = get(&format!("refiner.conv{i}.kernels"));
        let b = get(&format!("refiner.conv{i}.bias"));
        let out_side = side.div_ceil(stride);
        let pad = (((out_side - 1) * stride + 3).saturating_sub(side)) / 2;
        let mut y = vec![0.0f64; out_c * out_side * out_side];
        for o in 0..out_c {
            for oy in 0..out_side {
                for ox in 0..out_side {
                    let mut acc = b[o];
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= side as i64 || ix >= side as i64 {
                                    continue;
                                }
                                acc += x[(ci * side + iy as usize) * side + ix as usize]
                                    * k[((o * c + ci) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    let on = match mask {
                        Some(m) => m[unit],
                        None => {
                            record.push(acc > 0.0);
                            acc > 0.0
                        }
                    };
                    unit += 1;
                    y[(o * out_side + oy) * out_side + ox] = if on { acc } else { 0.0 };
                }
            }
        }
        x = y;
        c = out_c;
        side = out_side;
    }
    let dense = |x: &[f64], name: &str| -> Vec<f64> {
        let w = get(&format!("{name}.weight"));
        let b = get(&format!("{name}.bias"));
        let out = b.len();
        (0..out).map(|o| b[o] + x.iter().enumerate().map(|(i, v)| v * w[i * out + o]).sum::<f64>()).collect()
    };
    let elu = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|a| if a > 0.0 { a } else { a.exp_m1() }).collect() };
    let d1 = elu(dense(&x, "refiner.dense1"));
    let d2 = elu(dense(&d1, "refiner.dense2"));
    let shortcut = if params.find("refiner.skip.weight").is_some() { dense(&d1, "refiner.skip") } else { d1 };
    let d3: Vec<f64> = d2.iter().zip(&shortcut).map(|(a, b)| a + b).collect();
    dense(&d3, "refiner.head")
}

/// Finite-difference check of the whole refiner (image and every parameter)
/// against backprop, probing `sum(head ⊙ R)`. Returns the relative error per
/// parameter tensor, plus one entry named `image`.
///
/// The oracle is the f64 reference forward with ReLU patterns frozen at the
/// base point: that function is smooth, agrees with the network on the
/// current linear region, and so has the same gradient there.
pub fn refiner_grad_errors(config: &RefinerConfig, param_seed: u64, image: &RasterImage, proj_seed: u64) -> Vec<(String, f64)> {
    let config = config.clone();
    let refiner = CnnRefiner::new(config.clone(), param_seed).unwrap();
    let image = refiner.image_batch(&[image]).unwrap();
    let mut r = rng(proj_seed);
    let m = config.components;
    let proj: Vec<f64> = (0..head_size(m)).map(|_| r.random_range(-1.0..1.0)).collect();

    let image64: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let mut pattern = Vec::new();
    let base = reference_forward(&config, refiner.params(), &image64, None, &mut pattern);

    let mut g = Graph::new();
    let p = refiner.params().bind(&mut g, true);
    let x = g.leaf(image.clone()).unwrap();
    let h = refiner.forward_graph(&mut g, &p, x).unwrap();
    for (a, b) in g.value(h).data().iter().zip(&base) {
        assert!((*a as f64 - b).abs() < 1e-4, "forward mismatch {a} vs {b}");
    }
    let rt = g.constant(Tensor::new(&[1, head_size(m)], proj.iter().map(|&v| v as f32).collect()).unwrap()).unwrap();
    let prod = g.mul(h, rt).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut analytic = p.grads(&grads);
    analytic.push(grads.wrt(x));

    let eps = 1e-3f64;
    let probe = |params: &ParamSet, img: &[f64]| -> f64 {
        let out = reference_forward(&config, params, img, Some(&pattern), &mut Vec::new());
        out.iter().zip(&proj).map(|(a, b)| a * b).sum()
    };
    // f32 parameters cannot carry an f64 step exactly, so the step actually
    // taken is measured from the stored values.
    let param_diff = |id, j: usize| -> f64 {
        let mut plus = refiner.params().clone();
        plus.get_mut(id).data_mut()[j] += eps as f32;
        let mut minus = refiner.params().clone();
        minus.get_mut(id).data_mut()[j] -= eps as f32;
        let step = plus.get(id).data()[j] as f64 - minus.get(id).data()[j] as f64;
        (probe(&plus, &image64) - probe(&minus, &image64)) / step
    };

    let ids: Vec<_> = refiner.params().ids().collect();
    let mut numeric: Vec<Vec<f64>> =
        ids.iter().map(|&id| (0..refiner.params().get(id).len()).map(|j| param_diff(id, j)).collect()).collect();
    numeric.push(
        (0..image64.len())
            .map(|j| {
                let mut plus = image64.clone();
                plus[j] += eps;
                let mut minus = image64.clone();
                minus[j] -= eps;
                (probe(refiner.params(), &plus) - probe(refiner.params(), &minus)) / (2.0 * eps)
            })
            .collect(),
    );

    let mut names: Vec<String> = ids.iter().map(|&id| refiner.params().name(id).to_string()).collect();
    names.push("image".into());
    names
        .into_iter()
        .zip(&analytic)
        .zip(&numeric)
        .map(|((name, a), n)| {
            let diff: f64 = a.data().iter().zip(n).map(|(&a, n)| (a as f64 - n).powi(2)).sum::<f64>().sqrt();
            let na: f64 = a.data().iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
            let nn: f64 = n.iter().map(|n| n * n).sum::<f64>().sqrt();
            let d = na.max(nn);
            (name, if d < 1e-12 { diff } else { diff / d })
        })
        .collect()
}

