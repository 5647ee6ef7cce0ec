//! Adam with coupled L2 weight decay and a step learning-rate schedule.

use super::params::NetworkParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * theta` before the moments.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.005 }
    }
}

/// `lr0 * gamma^floor(step / period)`, counted in optimizer steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub period: usize,
    pub gamma: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { lr0: 3e-3, period: 200, gamma: 0.1 }
    }
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        lr_at(self.lr0, self.period, self.gamma, step)
    }
}

pub fn lr_at(lr0: f64, period: usize, gamma: f64, step: usize) -> f64 {
    lr0 * gamma.powi((step / period.max(1)) as i32)
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &NetworkParams<f64>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.2.len()]).collect();
        Adam { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut NetworkParams<f64>, grads: &NetworkParams<f64>, lr: f64) {
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let gs = grads.tensors();
        for (k, theta) in params.tensors_mut().into_iter().enumerate() {
            let g = gs[k].2;
            assert_eq!(g.len(), theta.len(), "gradient layout differs from parameters");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..theta.len() {
                let gi = g[i] + weight_decay * theta[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}
