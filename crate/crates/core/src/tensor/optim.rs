use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::Precision;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: OptimizerState,
    precision: Precision,
}

impl Adam {
    pub fn new(config: AdamConfig, precision: Precision) -> Self {
        Adam {
            config,
            state: OptimizerState::default(),
            precision,
        }
    }

    /// One bias-corrected Adam update over every parameter in `params`.
    /// Parameters without a gradient see a zero gradient; frozen rows are
    /// left unchanged.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for name in grads.names() {
            if !params.contains(name) {
                return Err(Error::MissingTensors(vec![name.to_string()]));
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let numel = params.get(&name).map_or(0, |p| p.numel());
            let g = grads.dense(&name, numel);
            if let Some(g) = &g {
                if g.len() != numel {
                    return Err(Error::shape("adam_step", format!("{name}: grad {} vs param {numel}", g.len())));
                }
            }
            let m = self.state.first.entry(name.clone()).or_insert_with(|| vec![0.0; numel]);
            let v = self.state.second.entry(name.clone()).or_insert_with(|| vec![0.0; numel]);
            if m.len() != numel {
                return Err(Error::shape("adam_step", format!("{name}: moment {} vs param {numel}", m.len())));
            }
            let frozen = params.frozen_rows(&name).map(<[bool]>::to_vec);
            let p = params.get_mut(&name).expect("name taken from store");
            let cols = p.cols();
            for i in 0..numel {
                if frozen.as_ref().is_some_and(|f| f[i / cols]) {
                    continue;
                }
                let gi = g.as_ref().map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let updated = p.data()[i] - lr * mhat / (vhat.sqrt() + eps);
                p.data_mut()[i] = self.precision.round(updated);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamGrad, Tensor};

    fn store(vals: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::default();
        s.insert("w", Tensor::row(vals));
        s
    }

    fn grads(vals: Vec<f64>) -> Gradients {
        let mut g = Gradients::default();
        g.add("w", ParamGrad::Dense(vals));
        g
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(vec![0.5, -1.0]);
        let mut adam = Adam::new(AdamConfig::default(), Precision::F64);
        adam.step(&mut p, &grads(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.5, -1.0]);
        assert_eq!(adam.state.step, 1);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut p = store(vec![0.5, -1.0]);
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, Precision::F64);
        adam.step(&mut p, &grads(vec![3.0, -7.0])).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.5, -1.0]);
    }

    #[test]
    fn matches_closed_form_second_step() {
        // state after one step with g1 = 0.2, then a second step with g2 = -0.4
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let (p0, g1, g2) = (1.5f64, 0.2f64, -0.4f64);
        let m1 = (1.0 - b1) * g1;
        let v1 = (1.0 - b2) * g1 * g1;
        let p1 = p0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g2;
        let v2 = b2 * v1 + (1.0 - b2) * g2 * g2;
        let p2 = p1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);

        let mut p = store(vec![p0]);
        let cfg = AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        };
        let mut adam = Adam::new(cfg, Precision::F64);
        adam.step(&mut p, &grads(vec![g1])).unwrap();
        assert!((p.get("w").unwrap().item() - p1).abs() < 1e-15);
        adam.step(&mut p, &grads(vec![g2])).unwrap();
        assert!((p.get("w").unwrap().item() - p2).abs() < 1e-15);
        assert_eq!(adam.state.step, 2);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = store(vec![0.0, 0.0]);
        let mut adam = Adam::new(AdamConfig::default(), Precision::F64);
        assert!(adam.step(&mut p, &grads(vec![1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn frozen_rows_untouched() {
        let mut p = ParamStore::default();
        p.insert("e", Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        p.freeze_row("e", 0);
        let mut g = Gradients::default();
        g.add("e", ParamGrad::Dense(vec![1.0; 4]));
        let mut adam = Adam::new(AdamConfig::default(), Precision::F64);
        adam.step(&mut p, &g).unwrap();
        let d = p.get("e").unwrap().data();
        assert_eq!(&d[..2], &[0.0, 0.0]);
        assert!(d[2] < 1.0);
    }
}
