//! Ground-truth cases and SNR-calibrated measurement noise.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::operator::{CoefficientPair, ForwardOperator, RangeNullBasis};
use crate::rng::{self, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCase {
    pub x: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub beta_star: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub y_noisy: Vec<f64>,
    pub seed: u64,
}

/// How measurement noise is scaled for a case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Sigma(f64),
    Snr(f64),
}

impl GroundTruthCase {
    pub fn from_signal(
        operator: &ForwardOperator,
        basis: &RangeNullBasis,
        x: Vec<f64>,
        noise: NoiseLevel,
        seed: u64,
    ) -> Result<Self> {
        check_len("signal", operator.p(), x.len())?;
        let pair = basis.project(&x)?;
        let y_clean = (operator.matrix() * DVector::from_column_slice(&x))
            .as_slice()
            .to_vec();
        let noise_seed = rng::derive_seed(seed, &[tags::SNR_NOISE]);
        let y_noisy = match noise {
            NoiseLevel::Sigma(sigma) => add_noise_sigma(&y_clean, sigma, noise_seed),
            NoiseLevel::Snr(snr) => add_noise_snr(&y_clean, snr, noise_seed)?,
        };
        Ok(Self {
            x,
            alpha_star: pair.alpha,
            beta_star: pair.beta,
            y_clean,
            y_noisy,
            seed,
        })
    }

    pub fn pair(&self) -> CoefficientPair {
        CoefficientPair {
            alpha: self.alpha_star.clone(),
            beta: self.beta_star.clone(),
        }
    }
}

pub fn add_noise_sigma(y_clean: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[tags::SNR_NOISE]);
    y_clean
        .iter()
        .map(|v| v + sigma * rng::normal(&mut r))
        .collect()
}

/// Noise standard deviation `‖y‖₂ / √(n·snr)`, so mean signal power over
/// noise variance equals `snr`.
pub fn snr_sigma(y_clean: &[f64], snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::InvalidConfig(format!("snr must be positive, got {snr}")));
    }
    let norm = y_clean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if y_clean.is_empty() || norm == 0.0 {
        return Err(Error::DegenerateInput("cannot calibrate SNR on a zero signal".into()));
    }
    Ok(norm / (y_clean.len() as f64 * snr).sqrt())
}

pub fn add_noise_snr(y_clean: &[f64], snr: f64, seed: u64) -> Result<Vec<f64>> {
    let sigma = snr_sigma(y_clean, snr)?;
    Ok(add_noise_sigma(y_clean, sigma, seed))
}
