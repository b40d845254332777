use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear variance schedule `β_1..β_T` with cumulative products `ᾱ_t = Π(1 − β_s)`.
/// Index `t` is 1-based throughout the public API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps < 2 {
            return Err(Error::InvalidConfig(format!(
                "diffusion needs at least 2 steps, got {t_steps}"
            )));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..t_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64)
            .collect();
        Ok(Self::from_betas(betas))
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Self { betas, alpha_bars }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `x_t = √ᾱ_t·x_0 + √(1 − ᾱ_t)·ε`.
    pub fn noise(&self, x0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
    }

    /// Coefficients of the ancestral step
    /// `x_{t−1} = c_x·x_t − c_eps·ε̂ + σ_t·z`, with `σ_t² = β_t` (zero at `t = 1`).
    pub fn reverse_coefficients(&self, t: usize) -> (f64, f64, f64) {
        let beta = self.beta(t);
        let c_x = 1.0 / (1.0 - beta).sqrt();
        let c_eps = c_x * beta / (1.0 - self.alpha_bar(t)).sqrt();
        let sigma = if t > 1 { beta.sqrt() } else { 0.0 };
        (c_x, c_eps, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("invalid diffusion schedule: {m}")));
        let n = self.betas.len();
        if n < 2 || self.alpha_bars.len() != n {
            return bad("length");
        }
        if !(0.0 < self.betas[0] && self.betas[0] < self.betas[n - 1] && self.betas[n - 1] < 1.0) {
            return bad("beta range");
        }
        if self.alpha_bars.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("alpha_bar must be strictly decreasing");
        }
        Ok(())
    }
}
