use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::math;
use crate::{Error, Result};

/// Adam optimizer state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, index: usize) -> &[f32] {
        &self.m[index]
    }

    /// One bias-corrected Adam update. Rejects NaN gradients before touching
    /// any parameter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f32) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid("gradient count does not match parameter count"));
        }
        for (id, grad) in params.ids().zip(grads) {
            if grad.shape() != params.get(id).shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    left: params.get(id).shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
            if grad.data().iter().any(|v| v.is_nan()) {
                return Err(Error::NanGradient(params.name(id).to_string()));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - libm::powf(self.beta1, t as f32);
        let c2 = 1.0 - libm::powf(self.beta2, t as f32);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads[k].data();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
            }
            if lr == 0.0 {
                continue;
            }
            let p = params.get_mut(id).data_mut();
            for j in 0..g.len() {
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (math::sqrt(v_hat) + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("w", Tensor::full(&[2], v));
        p
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = one_param(1.5);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &[Tensor::full(&[2], 1.0)], 0.1).unwrap();
        let before = p.clone();
        let m_before = adam.first_moment(0)[0];
        adam.step(&mut p, &[Tensor::zeros(&[2])], 0.0).unwrap();
        assert_eq!(p, before);
        assert!((adam.first_moment(0)[0] - 0.9 * m_before).abs() < 1e-7);

        // zero gradient from fresh state leaves params untouched at any lr
        let mut q = one_param(2.0);
        let mut fresh = Adam::new(&q);
        fresh.step(&mut q, &[Tensor::zeros(&[2])], 0.5).unwrap();
        assert_eq!(q.get(q.ids().next().unwrap()).data(), &[2.0, 2.0]);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let lr = 1e-3;
        let mut p = one_param(0.0);
        let mut adam = Adam::new(&p);
        let g = Tensor::from_parts(vec![2], vec![0.37, -4.2]);
        let mut last = [0.0f32; 2];
        for _ in 0..1000 {
            let before: Vec<f32> = p.get(p.ids().next().unwrap()).data().to_vec();
            adam.step(&mut p, &[g.clone()], lr).unwrap();
            let after = p.get(p.ids().next().unwrap()).data();
            last = [after[0] - before[0], after[1] - before[1]];
        }
        // step → -lr·sign(g)
        assert!((last[0] + lr).abs() < 0.05 * lr, "{last:?}");
        assert!((last[1] - lr).abs() < 0.05 * lr, "{last:?}");
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = one_param(3.0);
        let before = p.clone();
        let mut adam = Adam::new(&p);
        for _ in 0..5 {
            adam.step(&mut p, &[Tensor::full(&[2], 0.7)], 0.0).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = one_param(0.0);
        let mut adam = Adam::new(&p);
        let err = adam
            .step(&mut p, &[Tensor::from_parts(vec![2], vec![0.0, f32::NAN])], 0.1)
            .unwrap_err();
        assert_eq!(err, Error::NanGradient("w".to_string()));
    }
}
