use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction over a set of named tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<String, Moments>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.step
    }

    /// Applies one update. Every gradient must name an existing parameter of the
    /// same length; parameters without a gradient are left untouched.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor)>,
        grads: &BTreeMap<String, Vec<f64>>,
    ) -> Result<()> {
        let mut params: BTreeMap<String, &mut Tensor> = params.into_iter().collect();
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name}")))?;
            if p.len() != g.len() {
                return Err(Error::Contract(format!(
                    "gradient for {name} has {} entries, parameter has {}",
                    g.len(),
                    p.len()
                )));
            }
            if let Some(s) = self.state.get(name) {
                if s.m.len() != g.len() {
                    return Err(Error::Contract(format!("optimizer state for {name} has wrong length")));
                }
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let s = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            for ((w, &gi), (m, v)) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(s.m.iter_mut().zip(s.v.iter_mut()))
            {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
