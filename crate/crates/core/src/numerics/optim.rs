use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

/// Adam with bias correction, keeping per-parameter state by name.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.state.get(name)
    }

    /// Applies one update to every parameter that has a gradient. Parameters
    /// without a gradient entry are left untouched, step count included.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` is {:?}, parameter is {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(p.rows(), p.cols()),
                v: Tensor::zeros(p.rows(), p.cols()),
                step: 0,
            });
            st.step += 1;
            let t = st.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (i, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gv;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gv * gv;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `base_lr * decay^floor(epoch / period)`.
pub fn lr_schedule(base_lr: f64, epoch: usize, decay: f64, period: usize) -> f64 {
    base_lr * decay.powi((epoch / period.max(1)) as i32)
}
