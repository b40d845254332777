//! Empirical-to-analytic variance ratios of a null sampler.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::NullModel;
use crate::rng::{self, tags};

pub const MIN_VARIANCE_SAMPLES: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VarianceCalibration {
    pub ratios: Vec<f64>,
    pub mean_ratio: f64,
    pub sample_count: usize,
}

/// Ratios `empirical_j / analytic_j` for per-dimension variances.
pub fn variance_ratios(empirical: &[f64], analytic: &[f64], sample_count: usize) -> Result<VarianceCalibration> {
    check_len("analytic variance", empirical.len(), analytic.len())?;
    if let Some((j, v)) = analytic.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::InvalidReference(format!(
            "analytic variance of dimension {j} is {v}, must be positive"
        )));
    }
    let ratios: Vec<f64> = empirical.iter().zip(analytic).map(|(e, a)| e / a).collect();
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    Ok(VarianceCalibration {
        ratios,
        mean_ratio,
        sample_count,
    })
}

pub fn variance_calibration(
    sampler: &NullModel,
    alpha_star: &[f64],
    analytic_cov_diag: &[f64],
    sample_count: usize,
    seed: u64,
) -> Result<VarianceCalibration> {
    if sample_count < MIN_VARIANCE_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "variance calibration needs at least {MIN_VARIANCE_SAMPLES} samples, got {sample_count}"
        )));
    }
    check_len("analytic variance", sampler.q(), analytic_cov_diag.len())?;
    let samples = sampler.sample(alpha_star, sample_count, rng::derive_seed(seed, &[tags::VARCAL]))?;
    variance_ratios(&samples.column_variances(), analytic_cov_diag, sample_count)
}
