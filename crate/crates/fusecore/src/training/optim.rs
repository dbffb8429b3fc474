//! AdamW with decoupled weight decay, bias-corrected moments, and
//! optional global-norm gradient clipping. Frozen parameters are never
//! touched; moments are kept per parameter name so they survive
//! checkpointing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// First/second moment estimates plus the shared step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(cfg: AdamWConfig) -> OptimizerState {
        OptimizerState {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Scale all trainable gradients so their global L2 norm is at most
    /// `max_norm`. Returns the pre-clip norm.
    pub fn clip_global_norm(store: &ParamStore, max_norm: f64) -> f64 {
        let mut sq = 0.0;
        for p in store.iter() {
            if p.frozen() {
                continue;
            }
            if let Some(g) = p.grad() {
                sq += g.iter().map(|x| x * x).sum::<f64>();
            }
        }
        let norm = sq.sqrt();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in store.iter() {
                if p.frozen() {
                    continue;
                }
                if let Some(g) = p.grad() {
                    let value = p.value();
                    value.zero_grad();
                    let scaled: Vec<f64> = g.iter().map(|x| x * scale).collect();
                    value.accumulate_grad(&scaled);
                }
            }
        }
        norm
    }

    /// One AdamW step over every trainable parameter that accumulated a
    /// gradient. Gradients are consumed (zeroed).
    pub fn apply(&mut self, store: &ParamStore, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for p in store.iter() {
            if p.frozen() {
                continue;
            }
            let Some(grad) = p.grad() else { continue };
            let value = p.value();
            let n = value.numel();
            let slot = self.moments.entry(p.name()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let mut data = value.data().to_vec();
            for i in 0..n {
                let g = grad[i];
                slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * g;
                slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = slot.m[i] / bias1;
                let v_hat = slot.v[i] / bias2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + c.eps) + lr * c.weight_decay * data[i];
            }
            p.set_data(data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;

    fn single_param_store(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.create("w", &[1], vec![value]).unwrap();
        store
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_params() {
        let store = single_param_store(0.7);
        let mut opt = OptimizerState::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        // No gradient accumulated at all: nothing moves.
        opt.apply(&store, 0.1);
        assert_eq!(store.get("w").unwrap().value().data(), &[0.7]);
        // Explicit zero gradient: bias-corrected moments stay zero.
        let p = store.get("w").unwrap();
        p.value().accumulate_grad(&[0.0]);
        opt.apply(&store, 0.1);
        assert_eq!(store.get("w").unwrap().value().data(), &[0.7]);
    }

    #[test]
    fn single_step_matches_reference_formula() {
        // g=1, lr=0.1, beta1=0.9, beta2=0.98, wd=0:
        // m=0.1, v=0.02, m_hat=1, v_hat=1, delta = -0.1/(1+eps).
        let store = single_param_store(0.0);
        let cfg = AdamWConfig { beta1: 0.9, beta2: 0.98, eps: 1e-8, weight_decay: 0.0 };
        let mut opt = OptimizerState::new(cfg);
        store.get("w").unwrap().value().accumulate_grad(&[1.0]);
        opt.apply(&store, 0.1);

        // Step-by-step reference, written out independently.
        let g = 1.0f64;
        let m = 0.9 * 0.0 + 0.1 * g;
        let v = 0.98 * 0.0 + 0.02 * g * g;
        let m_hat = m / (1.0 - 0.9f64);
        let v_hat = v / (1.0 - 0.98f64);
        let expect = -0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        let got = store.get("w").unwrap().value().data()[0];
        assert!((got - expect).abs() <= 1e-12, "{got} vs {expect}");
        assert!((got + 0.1).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let store = single_param_store(2.0);
        let cfg = AdamWConfig { weight_decay: 0.05, ..Default::default() };
        let mut no_decay = OptimizerState::new(AdamWConfig { weight_decay: 0.0, ..cfg });
        let mut with_decay = OptimizerState::new(cfg);

        store.get("w").unwrap().value().accumulate_grad(&[1.0]);
        no_decay.apply(&store, 0.1);
        let plain = store.get("w").unwrap().value().data()[0];

        let store2 = single_param_store(2.0);
        store2.get("w").unwrap().value().accumulate_grad(&[1.0]);
        with_decay.apply(&store2, 0.1);
        let decayed = store2.get("w").unwrap().value().data()[0];

        // Decay subtracts exactly lr * wd * w on top of the update.
        assert!((plain - decayed - 0.1 * 0.05 * 2.0).abs() <= 1e-12);
    }

    #[test]
    fn frozen_parameters_never_move() {
        let mut store = ParamStore::new();
        let p = store.create("w", &[2], vec![1.0, -1.0]).unwrap();
        p.set_frozen(true);
        let mut opt = OptimizerState::new(AdamWConfig::default());
        opt.apply(&store, 0.5);
        assert_eq!(p.value().data(), &[1.0, -1.0]);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut store = ParamStore::new();
        let a = store.create("a", &[2], vec![0.0, 0.0]).unwrap();
        let b = store.create("b", &[1], vec![0.0]).unwrap();
        a.value().accumulate_grad(&[3.0, 0.0]);
        b.value().accumulate_grad(&[4.0]);
        let norm = OptimizerState::clip_global_norm(&store, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let ga = a.grad().unwrap();
        let gb = b.grad().unwrap();
        let clipped = (ga.iter().chain(&gb).map(|x| x * x).sum::<f64>()).sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);
    }
}
