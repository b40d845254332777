//! Intrinsic ambiguity maps: per-pixel variance of `V_r·α* + V_n·β`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{cascade::BasisRows, NullModel};
use crate::operator::RangeNullBasis;
use crate::rng::{self, tags};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Conditioned on one oracle `α*`, identified by its case index.
    Oracle(usize),
    /// Averaged over this many `α*`.
    Averaged(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AmbiguityMap {
    pub per_coordinate_variance: Vec<f64>,
    pub sample_count: usize,
    pub conditioning: Conditioning,
}

impl AmbiguityMap {
    pub fn mean_variance(&self) -> f64 {
        let v = &self.per_coordinate_variance;
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

fn check_inputs(sampler: &NullModel, basis: &RangeNullBasis, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("ambiguity map needs K >= 2, got {k}")));
    }
    check_len("null model conditioning", basis.rank(), sampler.r())?;
    check_len("null model output", basis.null_dim(), sampler.q())
}

fn map_values(
    sampler: &NullModel,
    rows: &BasisRows,
    alpha_star: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let betas = sampler.sample(alpha_star, k, seed)?;
    let mut v = rows.reconstruct(alpha_star, &betas).column_variances();
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(v)
}

pub fn ambiguity_map(
    sampler: &NullModel,
    alpha_star: &[f64],
    basis: &RangeNullBasis,
    k: usize,
    seed: u64,
) -> Result<AmbiguityMap> {
    check_inputs(sampler, basis, k)?;
    check_len("alpha*", basis.rank(), alpha_star.len())?;
    let rows = BasisRows::new(basis);
    let per_coordinate_variance =
        map_values(sampler, &rows, alpha_star, k, rng::derive_seed(seed, &[tags::AMBIGUITY, 0]))?;
    Ok(AmbiguityMap {
        per_coordinate_variance,
        sample_count: k,
        conditioning: Conditioning::Oracle(0),
    })
}

/// Mean of per-`α*` maps over a set of conditioning values.
pub fn ambiguity_map_averaged(
    sampler: &NullModel,
    alphas: &[Vec<f64>],
    basis: &RangeNullBasis,
    k: usize,
    seed: u64,
) -> Result<AmbiguityMap> {
    check_inputs(sampler, basis, k)?;
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("no alpha* to average over".into()));
    }
    let rows = BasisRows::new(basis);
    let maps = alphas
        .par_iter()
        .enumerate()
        .map(|(i, alpha)| {
            check_len("alpha*", basis.rank(), alpha.len())?;
            map_values(
                sampler,
                &rows,
                alpha,
                k,
                rng::derive_seed(seed, &[tags::AMBIGUITY, i as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0; basis.p()];
    for v in &maps {
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    acc.iter_mut().for_each(|a| *a /= alphas.len() as f64);
    Ok(AmbiguityMap {
        per_coordinate_variance: acc,
        sample_count: k,
        conditioning: Conditioning::Averaged(alphas.len()),
    })
}
