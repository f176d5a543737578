//! AdamW, global-norm clipping and the warm-up/cosine learning-rate curve.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moments for every trainable parameter of one store.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParameterStore) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        AdamW {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients held in `params`, at learning rate `lr`:
    /// `theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta`.
    pub fn step(&mut self, params: &mut ParameterStore, lr: f64) {
        assert_eq!(self.m.len(), params.len(), "optimizer built for another store");
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.requires_grad {
                continue;
            }
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for k in 0..value.len() {
                let g = grad[k];
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                let theta = value[k];
                value[k] = theta - lr * m_hat / (v_hat.sqrt() + c.eps) - lr * c.weight_decay * theta;
            }
        }
    }
}

/// Rescales every trainable gradient so the global l2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn grad_clip(params: &mut ParameterStore, max_norm: f64) -> f64 {
    let norm = params.global_grad_norm();
    if norm > max_norm {
        let k = max_norm / norm;
        for p in params.iter_mut().filter(|p| p.requires_grad) {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
        }
    }
    norm
}

/// Linear warm-up from 0 to `lr` over the first `warmup_fraction` of the
/// steps, then cosine decay to 0 at `total_steps`.
pub fn cosine_warmup_lr(step: usize, total_steps: usize, warmup_fraction: f64, lr: f64) -> f64 {
    let total = total_steps.max(1) as f64;
    let s = step.min(total_steps) as f64;
    let warm = (warmup_fraction * total).round();
    if s < warm {
        return lr * s / warm;
    }
    let span = total - warm;
    if span <= 0.0 {
        return lr;
    }
    0.5 * lr * (1.0 + (PI * (s - warm) / span).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{GradTensor, Tensor};

    fn single(value: f64, grad: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        let id = s.add("theta", Tensor::vector(vec![value]), true);
        s.get_mut(id).grad = Tensor::vector(vec![grad]);
        s
    }

    fn theta(s: &ParameterStore) -> f64 {
        s.iter().next().unwrap().1.value.data()[0]
    }

    #[test]
    fn first_step_example() {
        let mut s = single(1.0, 0.5);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s, 1e-3);
        // m_hat = 0.5, v_hat = 0.25
        let want = 1.0 - 1e-3 * (0.5 / (0.5 + 1e-8)) - 1e-3 * 0.01 * 1.0;
        assert!((theta(&s) - want).abs() < 1e-15);
        assert!((theta(&s) - 0.99899).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut s = single(0.7, 0.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        for _ in 0..5 {
            opt.step(&mut s, 1e-3);
        }
        assert_eq!(theta(&s), 0.7);
    }

    #[test]
    fn no_decay_matches_plain_adam() {
        // reference Adam written out directly
        let grads = [0.3, -1.2, 0.05, 2.0, -0.4, 0.0, 0.9];
        let (mut th, mut m, mut v) = (0.25f64, 0.0f64, 0.0f64);
        let mut s = single(0.25, 0.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        for (t, g) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            th -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            s.iter_mut().next().unwrap().grad = Tensor::vector(vec![*g]);
            opt.step(&mut s, 0.01);
            assert!((theta(&s) - th).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut s = ParameterStore::new();
        s.add("w", Tensor::vector(vec![1.0]), false);
        s.iter_mut().for_each(|p: &mut GradTensor| p.grad = Tensor::vector(vec![3.0]));
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s, 0.1);
        assert_eq!(theta(&s), 1.0);
    }

    fn two_param_store(g: [f64; 3]) -> ParameterStore {
        let mut s = ParameterStore::new();
        let a = s.add("a", Tensor::zeros(&[2]), true);
        let b = s.add("b", Tensor::zeros(&[1]), true);
        s.get_mut(a).grad = Tensor::vector(vec![g[0], g[1]]);
        s.get_mut(b).grad = Tensor::vector(vec![g[2]]);
        s
    }

    fn grads(s: &ParameterStore) -> Vec<f64> {
        s.iter().flat_map(|(_, p)| p.grad.data().to_vec()).collect()
    }

    #[test]
    fn clipping() {
        let mut small = two_param_store([0.3, 0.0, 0.4]);
        assert!((grad_clip(&mut small, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(grads(&small), vec![0.3, 0.0, 0.4]);

        let mut big = two_param_store([1.2, 0.0, 1.6]);
        let before = grads(&big);
        assert!((grad_clip(&mut big, 1.0) - 2.0).abs() < 1e-15);
        assert!((big.global_grad_norm() - 1.0).abs() < 1e-12);
        let after = grads(&big);
        let dot: f64 = before.iter().zip(&after).map(|(a, b)| a * b).sum();
        let cos = dot / (2.0 * big.global_grad_norm());
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_shape() {
        let (total, lr) = (1000, 1e-3);
        assert_eq!(cosine_warmup_lr(0, total, 0.06, lr), 0.0);
        assert!((cosine_warmup_lr(60, total, 0.06, lr) - lr).abs() < 1e-18);
        assert!((cosine_warmup_lr(30, total, 0.06, lr) - lr / 2.0).abs() < 1e-18);
        assert!(cosine_warmup_lr(total, total, 0.06, lr).abs() < 1e-18);
        let mid = cosine_warmup_lr(530, total, 0.06, lr);
        assert!((mid - lr / 2.0).abs() < 1e-15);
        let lrs: Vec<f64> = (60..=total).map(|s| cosine_warmup_lr(s, total, 0.06, lr)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
