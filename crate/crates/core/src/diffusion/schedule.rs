use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

/// Linear-beta DDPM noise schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(config: &ScheduleConfig) -> Result<Self> {
        if config.timesteps < 1 {
            return Err(Error::config("schedule.timesteps", "must be at least 1"));
        }
        if !(config.beta_start > 0.0 && config.beta_start <= config.beta_end && config.beta_end < 1.0) {
            return Err(Error::config(
                "schedule.beta_start",
                "betas must satisfy 0 < beta_start <= beta_end < 1",
            ));
        }
        let t = config.timesteps;
        let betas: Vec<f64> = (0..t)
            .map(|i| {
                if t == 1 {
                    config.beta_start
                } else {
                    config.beta_start + (config.beta_end - config.beta_start) * i as f64 / (t - 1) as f64
                }
            })
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            betas,
            alpha_bars,
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::Index(format!("timestep {t} outside [0, {})", self.len())));
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha_bars[t])
    }

    /// Noise-to-signal ratio `sqrt((1 - ᾱ) / ᾱ)` at step `t`.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        let ab = self.alpha_bar(t)?;
        Ok(((1.0 - ab) / ab).sqrt())
    }

    /// `z_t = sqrt(ᾱ_t) z0 + sqrt(1 - ᾱ_t) eps`.
    pub fn add_noise(&self, z0: &Matrix, eps: &Matrix, t: usize) -> Result<Matrix> {
        if z0.shape() != eps.shape() {
            return Err(Error::shape(format!(
                "latent {:?} and noise {:?} differ",
                z0.shape(),
                eps.shape()
            )));
        }
        let ab = self.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(z0.zip_map(eps, |z, e| a * z + b * e))
    }
}
