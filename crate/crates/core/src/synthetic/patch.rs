//! Patch sources on an abstract cortex seen through a random leadfield.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::case::{GroundTruthCase, NoiseLevel};
use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::{decompose_operator, ForwardOperator, RangeNullBasis, DEFAULT_RANK_TOLERANCE};
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    #[default]
    Ring,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LeadfieldKind {
    #[default]
    Gaussian,
    SmoothedGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchProblemConfig {
    pub n_sensors: usize,
    pub n_sources: usize,
    pub geometry: Geometry,
    pub leadfield: LeadfieldKind,
    /// Neighbourhood radius, in index units, of the leadfield moving average.
    pub smoothing_radius: usize,
    pub spacing_mm: f64,
    pub seed: u64,
}

impl Default for PatchProblemConfig {
    fn default() -> Self {
        Self {
            n_sensors: 16,
            n_sources: 256,
            geometry: Geometry::Ring,
            leadfield: LeadfieldKind::Gaussian,
            smoothing_radius: 2,
            spacing_mm: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSampling {
    pub width_range_mm: (f64, f64),
    pub amp_range: (f64, f64),
    pub flip_prob: f64,
    pub patch_counts: Vec<usize>,
    pub snr: f64,
}

impl Default for PatchSampling {
    fn default() -> Self {
        Self {
            width_range_mm: (5.0, 20.0),
            amp_range: (0.5, 2.0),
            flip_prob: 0.5,
            patch_counts: vec![1, 2, 3],
            snr: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchSourceProblem {
    pub config: PatchProblemConfig,
    pub operator: ForwardOperator,
    pub basis: RangeNullBasis,
}

impl PatchSourceProblem {
    /// Distance in mm between two sources.
    pub fn distance_mm(&self, i: usize, j: usize) -> f64 {
        source_distance_mm(&self.config, i, j)
    }
}

pub fn source_distance_mm(config: &PatchProblemConfig, i: usize, j: usize) -> f64 {
    let n = config.n_sources;
    let index_distance = match config.geometry {
        Geometry::Ring => {
            let d = i.abs_diff(j);
            d.min(n - d) as f64
        }
        Geometry::Grid => {
            let s = (n as f64).sqrt().round() as usize;
            let (di, dj) = ((i / s).abs_diff(j / s), (i % s).abs_diff(j % s));
            ((di * di + dj * dj) as f64).sqrt()
        }
    };
    index_distance * config.spacing_mm
}

pub fn build_patch_problem(config: &PatchProblemConfig) -> Result<PatchSourceProblem> {
    let (ns, nv) = (config.n_sensors, config.n_sources);
    if ns == 0 || ns * 4 > nv {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= n_sensors <= n_sources/4, got {ns} sensors for {nv} sources"
        )));
    }
    if !(config.spacing_mm > 0.0) {
        return Err(Error::InvalidConfig("spacing_mm must be positive".into()));
    }
    if config.geometry == Geometry::Grid {
        let s = (nv as f64).sqrt().round() as usize;
        if s * s != nv {
            return Err(Error::InvalidConfig(format!(
                "grid geometry needs a square source count, got {nv}"
            )));
        }
    }
    let mut r = rng::stream(config.seed, &[tags::LEADFIELD]);
    let raw = linalg::gaussian_matrix(&mut r, ns, nv, 1.0);
    let matrix = match config.leadfield {
        LeadfieldKind::Gaussian => raw,
        LeadfieldKind::SmoothedGaussian => {
            let radius = config.smoothing_radius as f64 * config.spacing_mm + 1e-9;
            let mut smooth = raw.clone();
            for j in 0..nv {
                let neighbours: Vec<usize> = (0..nv)
                    .filter(|&k| source_distance_mm(config, j, k) <= radius)
                    .collect();
                for i in 0..ns {
                    smooth[(i, j)] =
                        neighbours.iter().map(|&k| raw[(i, k)]).sum::<f64>() / neighbours.len() as f64;
                }
            }
            smooth
        }
    };
    let operator = ForwardOperator::new(matrix, 0.0)?;
    Ok(PatchSourceProblem {
        config: config.clone(),
        basis: decompose_operator(&operator, DEFAULT_RANK_TOLERANCE)?,
        operator,
    })
}

/// Source vector and the per-patch `(count, widths, signed amplitudes)` drawn for it.
pub struct PatchDraw {
    pub x: Vec<f64>,
    pub widths_mm: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

pub fn draw_patches(problem: &PatchSourceProblem, sampling: &PatchSampling, seed: u64) -> PatchDraw {
    let mut r = rng::stream(seed, &[tags::PATCH]);
    let nv = problem.config.n_sources;
    let k = sampling.patch_counts[r.random_range(0..sampling.patch_counts.len())];
    let mut x = vec![0.0; nv];
    let mut widths_mm = Vec::with_capacity(k);
    let mut amplitudes = Vec::with_capacity(k);
    let (w_lo, w_hi) = sampling.width_range_mm;
    let (a_lo, a_hi) = sampling.amp_range;
    for _ in 0..k {
        let centre = r.random_range(0..nv);
        let width = if w_hi > w_lo { r.random_range(w_lo..w_hi) } else { w_lo };
        let mut amp = if a_hi > a_lo { r.random_range(a_lo..a_hi) } else { a_lo };
        if r.random::<f64>() < sampling.flip_prob {
            amp = -amp;
        }
        for (j, v) in x.iter_mut().enumerate() {
            let d = problem.distance_mm(centre, j);
            *v += amp * (-d * d / (2.0 * width * width)).exp();
        }
        widths_mm.push(width);
        amplitudes.push(amp);
    }
    PatchDraw {
        x,
        widths_mm,
        amplitudes,
    }
}

fn validate_sampling(s: &PatchSampling) -> Result<()> {
    let (w_lo, w_hi) = s.width_range_mm;
    if !(w_lo > 0.0 && w_hi >= w_lo) {
        return Err(Error::InvalidConfig(format!("invalid width range ({w_lo}, {w_hi})")));
    }
    if !(s.amp_range.1 >= s.amp_range.0) {
        return Err(Error::InvalidConfig("amplitude range is reversed".into()));
    }
    if !(0.0..=1.0).contains(&s.flip_prob) {
        return Err(Error::InvalidConfig(format!("flip_prob {} outside [0, 1]", s.flip_prob)));
    }
    if s.patch_counts.is_empty() || s.patch_counts.contains(&0) {
        return Err(Error::InvalidConfig("patch counts must be a nonempty set of positive integers".into()));
    }
    Ok(())
}

/// `count` cases; case `i` uses seed `derive_seed(seed, [PATCH, i])`.
pub fn sample_patch_sources(
    problem: &PatchSourceProblem,
    count: usize,
    sampling: &PatchSampling,
    seed: u64,
) -> Result<Vec<GroundTruthCase>> {
    validate_sampling(sampling)?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let case_seed = rng::derive_seed(seed, &[tags::PATCH, i as u64]);
            let draw = draw_patches(problem, sampling, case_seed);
            GroundTruthCase::from_signal(
                &problem.operator,
                &problem.basis,
                draw.x,
                NoiseLevel::Snr(sampling.snr),
                case_seed,
            )
        })
        .collect()
}
