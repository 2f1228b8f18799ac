//! AdamW with decoupled weight decay, and cosine annealing.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Optimizer state for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    decay: Vec<bool>,
    t: u64,
}

impl AdamW {
    /// Weight decay applies to matrices only; vectors (biases, norm gains,
    /// position tables flattened to 1-D) are left alone.
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            decay: params.iter().map(|p| p.rank() >= 2).collect(),
            t: 0,
        }
    }

    /// Overrides which parameters receive weight decay.
    pub fn with_decay_mask(mut self, decay: Vec<bool>) -> Self {
        self.decay = decay;
        self
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err!(
                "optimizer holds {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != p.len() {
                return Err(shape_err!("slot {i}: param {} / grad {} / state {}", p.len(), g.len(), self.m[i].len()));
            }
        }
        if !(lr >= 0.0) {
            return Err(param_err!("learning rate must be non-negative, got {lr}"));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let shrink = if self.decay[i] { 1.0 - lr * c.weight_decay } else { 1.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w = *w * shrink - lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if step > total {
        return Err(param_err!("step {step} is past the schedule length {total}"));
    }
    if step == total {
        return Ok(lr_min);
    }
    let frac = step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor> {
        vec![Tensor::new(&[1, 1], vec![v]).unwrap()]
    }

    #[test]
    fn zero_gradient_no_decay_is_still() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = scalar(0.7);
        let mut opt = AdamW::new(cfg, &p);
        for _ in 0..5 {
            opt.step(&mut p, &[vec![0.0]], 0.1).unwrap();
        }
        assert_eq!(p[0].data(), &[0.7]);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = 1, v̂ = 1 after one step with g = 1
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = scalar(0.0);
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &[vec![1.0]], 0.1).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_only_shrinks() {
        let mut p = scalar(2.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        opt.step(&mut p, &[vec![0.0]], 0.1).unwrap();
        assert_eq!(p[0].data()[0], 2.0 * (1.0 - 0.1 * 0.05));
    }

    #[test]
    fn vectors_are_not_decayed() {
        let mut p = vec![Tensor::new(&[1], vec![2.0]).unwrap()];
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        opt.step(&mut p, &[vec![0.0]], 0.1).unwrap();
        assert_eq!(p[0].data()[0], 2.0);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.3, 0.0).unwrap(), 0.3);
        assert_eq!(cosine_lr(100, 100, 0.3, 0.0).unwrap(), 0.0);
        assert!((cosine_lr(50, 100, 0.3, 0.0).unwrap() - 0.15).abs() < 1e-15);
        assert!(cosine_lr(101, 100, 0.3, 0.0).is_err());
        let mut last = f64::INFINITY;
        for s in 0..=37 {
            let lr = cosine_lr(s, 37, 1.0, 0.0).unwrap();
            assert!(lr <= last);
            last = lr;
        }
    }
}
