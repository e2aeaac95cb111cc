use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamStore;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.ids().map(|id| {
            let (r, c) = params.value(id).shape();
            Matrix::zeros(r, c)
        }).collect::<Vec<_>>();
        AdamW { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One update with learning rate `lr`. Parameters without a gradient
    /// are treated as having a zero gradient.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Option<Matrix<T>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::InvalidState("optimizer state does not match the parameters".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(lr / bc1);
        let inv_sqrt_bc2 = T::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = T::from_f64_lossy(c.eps);
        let decay = T::from_f64_lossy(1.0 - lr * c.weight_decay);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let w = params.value_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if let Some(g) = &grads[i] {
                if g.shape() != w.shape() {
                    return Err(Error::InvalidState(format!("gradient {i} has the wrong shape")));
                }
                for (mk, &gk) in m.data.iter_mut().zip(&g.data) {
                    *mk = b1 * *mk + one_b1 * gk;
                }
                for (vk, &gk) in v.data.iter_mut().zip(&g.data) {
                    *vk = b2 * *vk + one_b2 * gk * gk;
                }
            } else {
                m.data.iter_mut().for_each(|mk| *mk = b1 * *mk);
                v.data.iter_mut().for_each(|vk| *vk = b2 * *vk);
            }
            for ((wk, &mk), &vk) in w.data.iter_mut().zip(&m.data).zip(&v.data) {
                *wk = *wk * decay - step_size * mk / (vk.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

/// One-cycle learning-rate policy with cosine segments: a warm-up from
/// `peak / div` to `peak` over the first `warmup` fraction of the steps,
/// then annealing to `peak / (div · final_div)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup: f64,
    pub div: f64,
    pub final_div: f64,
}

impl OneCycle {
    pub fn new(peak: f64, total_steps: usize) -> Self {
        OneCycle { peak, total_steps, warmup: 0.5, div: 25.0, final_div: 1e4 }
    }

    pub fn initial(&self) -> f64 {
        self.peak / self.div
    }

    pub fn last(&self) -> f64 {
        self.initial() / self.final_div
    }

    /// Rate at schedule position `tau` in `[0, 1]`.
    pub fn at_fraction(&self, tau: f64) -> f64 {
        let tau = tau.clamp(0.0, 1.0);
        let cos_mix = |from: f64, to: f64, x: f64| to + (from - to) * (1.0 + (PI * x).cos()) / 2.0;
        if tau <= self.warmup {
            let x = if self.warmup > 0.0 { tau / self.warmup } else { 1.0 };
            cos_mix(self.initial(), self.peak, x)
        } else {
            cos_mix(self.peak, self.last(), (tau - self.warmup) / (1.0 - self.warmup))
        }
    }

    /// Rate used by optimizer step `step` (0-based).
    pub fn at_step(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.peak;
        }
        self.at_fraction(step as f64 / (self.total_steps - 1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cycle_peaks_at_the_midpoint() {
        let s = OneCycle::new(0.005, 101);
        assert!(s.at_step(0) < 0.005);
        assert_eq!(s.at_step(50), 0.005);
        assert!(s.at_step(100) <= s.at_step(0));
        assert!((s.at_step(0) - 0.0002).abs() < 1e-15);
        // cosine segments: a quarter of the way up is halfway in cosine terms
        let q = s.at_fraction(0.25);
        let expect = 0.005 + (0.0002 - 0.005) * (1.0 + (PI * 0.5).cos()) / 2.0;
        assert!((q - expect).abs() < 1e-15);
        let rising = (0..=50).map(|i| s.at_step(i)).collect::<Vec<_>>();
        assert!(rising.windows(2).all(|w| w[0] < w[1]));
        let falling = (50..=100).map(|i| s.at_step(i)).collect::<Vec<_>>();
        assert!(falling.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn adamw_without_gradient_only_decays() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.add("w", Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let before = ps.value(id).clone();
        let mut opt = AdamW::new(AdamWConfig::default(), &ps);
        let zero = vec![Some(Matrix::zeros(1, 3))];
        opt.update(&mut ps, &zero, 0.1).unwrap();
        let expect: Vec<f64> = before.data.iter().map(|w| w * (1.0 - 0.1 * 0.01)).collect();
        assert_eq!(ps.value(id).data, expect);

        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() }, &ps);
        let snapshot = ps.clone();
        opt.update(&mut ps, &zero, 0.1).unwrap();
        opt.update(&mut ps, &[None], 0.1).unwrap();
        assert_eq!(ps, snapshot);
    }

    #[test]
    fn adamw_first_step_moves_by_the_learning_rate() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.add("w", Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap());
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() }, &ps);
        let g = vec![Some(Matrix::from_vec(1, 2, vec![3.0, -0.2]).unwrap())];
        opt.update(&mut ps, &g, 0.01).unwrap();
        let w = &ps.value(id).data;
        assert!((w[0] + 0.01).abs() < 1e-9 && (w[1] - 0.01).abs() < 1e-9);
    }
}
