use serde::{Deserialize, Serialize};

use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
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

/// Bias-corrected Adam over a named parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.get_mut(name).expect("moment for every parameter");
            for (mi, gi) in m.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = self.v.get_mut(name).expect("moment for every parameter");
            for (vi, gi) in v.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let (m, v) = (&self.m.get(name).unwrap(), &self.v.get(name).unwrap());
            for ((pi, mi), vi) in p.as_mut_slice().iter_mut().zip(m.as_slice()).zip(v.as_slice()) {
                *pi -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamSet::new();
        p.insert("w", Matrix::row_vector(&[1.0, -2.0]));
        let mut g = ParamSet::new();
        g.insert("w", Matrix::row_vector(&[0.5, -3.0]));
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.update(&mut p, &g, 0.1);
        let w = p.get("w").unwrap();
        assert!((w.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((w.get(0, 1) + 1.9).abs() < 1e-6);
    }
}
