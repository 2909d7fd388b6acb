use serde::{Deserialize, Serialize};

use super::PolicyError;

pub const DEFAULT_STEPS: usize = 100;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// DDPM noise schedule with precomputed products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule: ᾱ(t) ∝ cos²(((t/T) + s)/(1 + s) · π/2), betas clipped
    /// at 0.999 and ᾱ recomputed from the clipped betas.
    pub fn cosine(steps: usize) -> Result<Self, PolicyError> {
        if steps < 2 {
            return Err(PolicyError::InvalidConfig(format!("diffusion needs at least 2 steps, got {steps}")));
        }
        let f = |t: f64| {
            let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let betas: Vec<f64> = (0..steps)
            .map(|i| (1.0 - f((i + 1) as f64) / f(i as f64)).clamp(0.0, MAX_BETA))
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// Variance of q(x_{t−1} | x_t, x_0).
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        self.betas[t] * (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t])
    }
}

/// x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · noise.
pub fn forward_noise(x0: &[f64], t: usize, schedule: &NoiseSchedule, noise: &[f64]) -> Result<Vec<f64>, PolicyError> {
    if x0.len() != noise.len() {
        return Err(PolicyError::ShapeMismatch {
            expected: x0.len(),
            actual: noise.len(),
        });
    }
    if t >= schedule.steps() {
        return Err(PolicyError::InvalidConfig(format!("step {t} outside schedule of {}", schedule.steps())));
    }
    let a = schedule.alpha_bars[t].sqrt();
    let s = (1.0 - schedule.alpha_bars[t]).sqrt();
    Ok(x0.iter().zip(noise).map(|(x, n)| a * x + s * n).collect())
}
