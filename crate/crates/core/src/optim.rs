//! Adam with bias correction and a fixed learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Zeroed moments for parameters of the given lengths.
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        Adam {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn update(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::arg(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = T::lit(1.0 - b1.powf(t));
        let c2 = T::lit(1.0 - b2.powf(t));
        let (b1, b2) = (T::lit(b1), T::lit(b2));
        let (one, lr, eps) = (T::one(), T::lit(self.cfg.lr), T::lit(self.cfg.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.len() != m.len() || !p.tracks_grad() {
                return Err(Error::arg("parameter without a matching gradient buffer"));
            }
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate_against_the_gradient_sign() {
        let mut p = Param::new(vec![1.0f64, -2.0, 0.5]);
        p.ensure_grad();
        p.grad = vec![3.0, -0.5, 0.0];
        let mut adam = Adam::new(AdamConfig::default(), &[3]);
        adam.update(&mut [&mut p]).unwrap();
        assert!((p.value[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert!((p.value[1] - (-2.0 + 1e-4)).abs() < 1e-10);
        assert_eq!(p.value[2], 0.5);
    }

    #[test]
    fn matches_reference_recurrence() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut p = Param::new(vec![0.0f64]);
        p.ensure_grad();
        let mut adam = Adam::new(cfg, &[1]);
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = (t as f64).sin();
            p.grad[0] = g;
            adam.update(&mut [&mut p]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p.value[0] - w).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged() {
        let mut p = Param::new(vec![0.3f32; 4]);
        p.ensure_grad();
        let before = p.value.clone();
        Adam::new(AdamConfig::default(), &[4]).update(&mut [&mut p]).unwrap();
        assert_eq!(p.value, before);
    }
}
