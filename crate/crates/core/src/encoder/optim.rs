use serde::{Deserialize, Serialize};

use super::params::{EncoderParams, ParamGroup, Weights};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay. Weight decay skips biases and norm
/// parameters. Frozen or inactive groups are never written.
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, weights: &Weights) -> Self {
        let mut m = Vec::new();
        weights.visit(|_, _, _, _, x| m.push(vec![0.0; x.len()]));
        AdamW {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &Weights, lr: f64, active: impl Fn(ParamGroup) -> bool) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let mut gs: Vec<&[f64]> = Vec::new();
        grads.visit(|_, _, _, _, x| gs.push(x));
        let freeze = params.freeze.clone();
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.weights.visit_mut(|_, group, decay, _, x| {
            let i = k;
            k += 1;
            if freeze.is_frozen(group) || !active(group) {
                return;
            }
            let g = gs[i];
            let (m, v) = (&mut ms[i], &mut vs[i]);
            for j in 0..x.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.epsilon);
                if decay {
                    x[j] -= lr * c.weight_decay * x[j];
                }
                x[j] -= lr * update;
            }
        });
    }
}

/// Linear warmup over the first `warmup_fraction` of steps, then linear decay
/// to zero.
pub fn learning_rate_at(step: usize, total: usize, base: f64, warmup_fraction: f64) -> f64 {
    let total = total.max(1);
    let warmup = ((total as f64) * warmup_fraction).ceil() as usize;
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        let rest = (total - warmup).max(1) as f64;
        base * ((total - step.min(total)) as f64 / rest).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let lrs: Vec<f64> = (0..100).map(|s| learning_rate_at(s, 100, 1.0, 0.1)).collect();
        assert!((lrs[0] - 0.1).abs() < 1e-12);
        assert!((lrs[9] - 1.0).abs() < 1e-12);
        assert!((lrs[10] - 1.0).abs() < 1e-12);
        assert!(lrs[99] > 0.0 && lrs[99] < 0.02);
        assert!(lrs.windows(2).skip(10).all(|w| w[1] <= w[0]));
        assert_eq!(learning_rate_at(0, 1, 2.0, 0.1), 2.0);
    }
}
