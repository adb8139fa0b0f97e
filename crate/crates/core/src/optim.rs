//! Adam with decoupled weight decay over flat parameter blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
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
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// Optimizer state: step count and first/second moments per block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, block_sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update. The decay `θ ← θ(1 − lr·λ)` is applied to the weights
    /// directly, separate from the moment-based step.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidInput(format!(
                "optimizer tracks {} blocks, got {} parameter and {} gradient blocks",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - c.lr * c.weight_decay;
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::InvalidInput(format!("block {b} size mismatch")));
            }
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] * decay - c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.update(&mut [&mut p], &[&[0.0; 3]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_gradient_decays_multiplicatively() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &[2]);
        let mut p = vec![2.0, -4.0];
        opt.update(&mut [&mut p], &[&[0.0; 2]]).unwrap();
        assert_eq!(p, vec![2.0 * 0.95, -4.0 * 0.95]);
    }

    #[test]
    fn two_steps_on_quadratic_match_hand_computation() {
        // loss = 0.5·x², gradient = x; lr 0.1, decay 0.1, x₀ = 1
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        };
        let mut opt = AdamW::new(cfg, &[1]);
        let mut x = vec![1.0];

        // step 1: m = 0.1, v = 0.001, m̂ = 1, v̂ = 1
        let g = x[0];
        opt.update(&mut [&mut x], &[&[g]]).unwrap();
        let x1 = 1.0 * (1.0 - 0.01) - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((x[0] - x1).abs() < 1e-12);

        // step 2
        let g2 = x[0];
        opt.update(&mut [&mut x], &[&[g2]]).unwrap();
        let m2 = 0.9 * 0.1 + 0.1 * x1;
        let v2 = 0.999 * 0.001 + 0.001 * x1 * x1;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.999f64 * 0.999);
        let x2 = x1 * 0.99 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((x[0] - x2).abs() < 1e-12);
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn block_mismatch_is_an_error() {
        let mut opt = AdamW::new(AdamWConfig::default(), &[2]);
        let mut p = vec![0.0; 3];
        assert!(opt.update(&mut [&mut p], &[&[0.0; 3]]).is_err());
        assert!(AdamWConfig {
            lr: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
