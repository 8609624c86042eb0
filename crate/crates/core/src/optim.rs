//! Adam optimizer with bias-corrected moment estimates.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update across all parameters. Parameters without a gradient
    /// entry are treated as zero-gradient (moments still decay).
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &HashMap<String, Vec<f64>>,
        cfg: &AdamConfig,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let zero = Vec::new();
        for p in params.iter_mut() {
            let g = grads.get(&p.name).unwrap_or(&zero);
            if !g.is_empty() && g.len() != p.values.len() {
                return Err(Error::Dimension(format!(
                    "gradient for {} has {} values, param has {}",
                    p.name,
                    g.len(),
                    p.values.len()
                )));
            }
            let m = self
                .m
                .entry(p.name.clone())
                .or_insert_with(|| vec![0.0; p.values.len()]);
            let v = self
                .v
                .entry(p.name.clone())
                .or_insert_with(|| vec![0.0; p.values.len()]);
            for i in 0..p.values.len() {
                let gi = if g.is_empty() { 0.0 } else { g[i] };
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
