//! Undersampled Fourier operator on a real image grid.
//!
//! The unitary DFT of a real image is Hermitian-symmetric, so the mask keeps
//! frequencies in conjugate classes `{k, −k}`. Each kept frequency contributes
//! two real rows (real and imaginary part), giving `2·N_kept` measurements of
//! rank `N_kept`. With this layout `AᵀA` is the orthogonal projector onto the
//! identifiable subspace and `Aᵀy` is the real inverse DFT of the masked data.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::operator::{decompose_operator, ForwardOperator, RangeNullBasis, DEFAULT_RANK_TOLERANCE};
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    #[default]
    Random,
    CenteredLowfreq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierToyConfig {
    pub side: usize,
    /// 1 for a line of `side` pixels, 2 for a `side × side` image.
    pub dims: usize,
    pub keep_fraction: f64,
    pub mask_kind: MaskKind,
    pub k_sigma: f64,
    pub seed: u64,
}

impl Default for FourierToyConfig {
    fn default() -> Self {
        Self {
            side: 8,
            dims: 2,
            keep_fraction: 0.25,
            mask_kind: MaskKind::Random,
            k_sigma: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FourierToyProblem {
    pub config: FourierToyConfig,
    /// One entry per frequency, 1 if retained.
    pub mask: Vec<u8>,
    /// Retained frequencies in row order.
    pub kept: Vec<usize>,
    pub operator: ForwardOperator,
    pub basis: RangeNullBasis,
}

fn frequency_coords(f: usize, side: usize, dims: usize) -> Vec<usize> {
    if dims == 1 {
        vec![f]
    } else {
        vec![f / side, f % side]
    }
}

fn conjugate(f: usize, side: usize, dims: usize) -> usize {
    frequency_coords(f, side, dims)
        .iter()
        .fold(0, |acc, &k| acc * side + (side - k) % side)
}

fn wrapped_radius(f: usize, side: usize, dims: usize) -> f64 {
    frequency_coords(f, side, dims)
        .iter()
        .map(|&k| {
            let w = k.min(side - k) as f64;
            w * w
        })
        .sum::<f64>()
        .sqrt()
}

/// Frequencies grouped into conjugate classes, each listed once.
fn conjugate_classes(side: usize, dims: usize) -> Vec<Vec<usize>> {
    let n = side.pow(dims as u32);
    let mut seen = vec![false; n];
    let mut classes = Vec::new();
    for f in 0..n {
        if seen[f] {
            continue;
        }
        let g = conjugate(f, side, dims);
        seen[f] = true;
        seen[g] = true;
        classes.push(if g == f { vec![f] } else { vec![f, g] });
    }
    classes
}

pub fn build_mask(config: &FourierToyConfig) -> Result<Vec<u8>> {
    let (side, dims) = (config.side, config.dims);
    let n = side.pow(dims as u32);
    let target = (config.keep_fraction * n as f64).round() as usize;
    if target == 0 {
        return Err(Error::InvalidConfig(format!(
            "keep_fraction {} retains no coefficients on {n} frequencies",
            config.keep_fraction
        )));
    }
    let mut classes = conjugate_classes(side, dims);
    match config.mask_kind {
        MaskKind::Random => {
            classes.shuffle(&mut rng::stream(config.seed, &[tags::FOURIER_MASK]));
        }
        MaskKind::CenteredLowfreq => {
            classes.sort_by(|a, b| {
                wrapped_radius(a[0], side, dims)
                    .total_cmp(&wrapped_radius(b[0], side, dims))
                    .then(a[0].cmp(&b[0]))
            });
        }
    }
    // Pairs never change the parity of the deficit, so a self-conjugate
    // frequency is skipped when taking it would leave an odd deficit that no
    // later self-conjugate frequency could close.
    let mut singles_left = classes.iter().filter(|c| c.len() == 1).count();
    let mut mask = vec![0u8; n];
    let mut count = 0;
    for class in &classes {
        let take = if class.len() == 1 {
            singles_left -= 1;
            count < target && ((target - count - 1) % 2 == 0 || singles_left > 0)
        } else {
            count + 2 <= target
        };
        if take {
            class.iter().for_each(|&f| mask[f] = 1);
            count += class.len();
        }
        if count == target {
            break;
        }
    }
    Ok(mask)
}

pub fn build_fourier_toy(config: &FourierToyConfig) -> Result<FourierToyProblem> {
    if config.side < 4 {
        return Err(Error::InvalidConfig(format!("side must be >= 4, got {}", config.side)));
    }
    if !(1..=2).contains(&config.dims) {
        return Err(Error::InvalidConfig(format!("dims must be 1 or 2, got {}", config.dims)));
    }
    if !(config.keep_fraction > 0.0 && config.keep_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "keep_fraction must lie in (0, 1], got {}",
            config.keep_fraction
        )));
    }
    let (side, dims) = (config.side, config.dims);
    let n = side.pow(dims as u32);
    let mask = build_mask(config)?;
    let kept: Vec<usize> = (0..n).filter(|&f| mask[f] == 1).collect();
    let norm = 1.0 / (n as f64).sqrt();
    let mut a = DMatrix::zeros(2 * kept.len(), n);
    for (row, &f) in kept.iter().enumerate() {
        let k = frequency_coords(f, side, dims);
        for pixel in 0..n {
            let x = frequency_coords(pixel, side, dims);
            let phase = k.iter().zip(&x).map(|(a, b)| (a * b) % side).sum::<usize>() % side;
            let theta = -2.0 * PI * phase as f64 / side as f64;
            a[(2 * row, pixel)] = norm * theta.cos();
            a[(2 * row + 1, pixel)] = norm * theta.sin();
        }
    }
    let operator = ForwardOperator::new(a, config.k_sigma)?;
    let basis = decompose_operator(&operator, DEFAULT_RANK_TOLERANCE)?;
    Ok(FourierToyProblem {
        config: config.clone(),
        mask,
        kept,
        operator,
        basis,
    })
}

impl FourierToyProblem {
    pub fn n_pixels(&self) -> usize {
        self.operator.p()
    }

    pub fn n_kept(&self) -> usize {
        self.kept.len()
    }

    pub fn kept_fraction(&self) -> f64 {
        self.n_kept() as f64 / self.n_pixels() as f64
    }

    /// `x_α* = F⁻¹MFx`.
    pub fn oracle_identifiable(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("image", self.n_pixels(), x.len())?;
        let a = self.operator.matrix();
        let ax = a * DVector::from_column_slice(x);
        Ok((a.transpose() * ax).as_slice().to_vec())
    }

    /// `x̂_α`, the real inverse DFT of (possibly noisy) masked coefficients.
    pub fn identifiable_estimate(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("k-space measurement", self.operator.n(), y.len())?;
        Ok((self.operator.matrix().transpose() * DVector::from_column_slice(y))
            .as_slice()
            .to_vec())
    }

    /// Range coefficients `V_rᵀ·x̂_α` of the estimate from `y`.
    pub fn alpha_from_measurement(&self, y: &[f64]) -> Result<Vec<f64>> {
        let x_hat = self.identifiable_estimate(y)?;
        Ok((self.basis.v_r().transpose() * DVector::from_vec(x_hat))
            .as_slice()
            .to_vec())
    }

    /// `y = A·x + σ·ε` with `ε` drawn from `seed`.
    pub fn measure(&self, x: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
        check_len("image", self.n_pixels(), x.len())?;
        let mut y = (self.operator.matrix() * DVector::from_column_slice(x))
            .as_slice()
            .to_vec();
        if sigma > 0.0 {
            let mut r = rng::stream(seed, &[tags::OPERATOR_NOISE]);
            y.iter_mut().for_each(|v| *v += sigma * rng::normal(&mut r));
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(seed: u64, n: usize) -> Vec<f64> {
        rng::normal_vec(&mut rng::stream(seed, &[0]), n)
    }

    #[test]
    fn full_sampling_identifies_everything() {
        for dims in [1, 2] {
            let cfg = FourierToyConfig {
                dims,
                side: if dims == 1 { 16 } else { 6 },
                keep_fraction: 1.0,
                ..FourierToyConfig::default()
            };
            let toy = build_fourier_toy(&cfg).unwrap();
            assert_eq!(toy.basis.null_dim(), 0);
            let x = random_image(1, toy.n_pixels());
            let xa = toy.oracle_identifiable(&x).unwrap();
            for (a, b) in xa.iter().zip(&x) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn null_component_is_invisible() {
        for kind in [MaskKind::Random, MaskKind::CenteredLowfreq] {
            let toy = build_fourier_toy(&FourierToyConfig {
                mask_kind: kind,
                ..FourierToyConfig::default()
            })
            .unwrap();
            assert_eq!(toy.basis.rank(), toy.n_kept());
            for s in 0..100 {
                let x = random_image(s, toy.n_pixels());
                let xa = toy.oracle_identifiable(&x).unwrap();
                let xb: Vec<f64> = x.iter().zip(&xa).map(|(a, b)| a - b).collect();
                let ab = toy.operator.matrix() * DVector::from_vec(xb);
                assert!(ab.amax() < 1e-10);
            }
        }
    }

    #[test]
    fn mask_is_symmetric_with_requested_fraction() {
        for (side, dims, keep) in [(8, 2, 0.25), (9, 2, 0.3), (32, 1, 0.25), (7, 1, 0.5)] {
            for kind in [MaskKind::Random, MaskKind::CenteredLowfreq] {
                let cfg = FourierToyConfig {
                    side,
                    dims,
                    keep_fraction: keep,
                    mask_kind: kind,
                    ..FourierToyConfig::default()
                };
                let toy = build_fourier_toy(&cfg).unwrap();
                let n = toy.n_pixels();
                assert!((toy.kept_fraction() - keep).abs() <= 1.0 / n as f64 + 1e-12);
                for f in 0..n {
                    assert_eq!(toy.mask[f], toy.mask[conjugate(f, side, dims)]);
                }
                assert!(toy.mask.iter().all(|&m| m <= 1));
            }
        }
    }

    #[test]
    fn lowfreq_mask_contains_dc_and_neighbors() {
        let toy = build_fourier_toy(&FourierToyConfig {
            mask_kind: MaskKind::CenteredLowfreq,
            ..FourierToyConfig::default()
        })
        .unwrap();
        for f in [0, 1, 7, 8, 56] {
            assert_eq!(toy.mask[f], 1, "frequency {f}");
        }
    }

    #[test]
    fn noisy_estimate_error_matches_retained_count() {
        let toy = build_fourier_toy(&FourierToyConfig::default()).unwrap();
        let x = random_image(3, toy.n_pixels());
        let xa = toy.oracle_identifiable(&x).unwrap();
        let sigma = 0.3;
        let draws = 10_000;
        let mut acc = 0.0;
        for d in 0..draws {
            let y = toy.measure(&x, sigma, d).unwrap();
            let est = toy.identifiable_estimate(&y).unwrap();
            acc += est.iter().zip(&xa).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let ratio = acc / draws as f64 / (sigma * sigma) / toy.n_kept() as f64;
        assert!((ratio - 1.0).abs() < 0.03, "{ratio}");
    }

    #[test]
    fn invalid_configs() {
        let bad = |cfg: FourierToyConfig| build_fourier_toy(&cfg).is_err();
        assert!(bad(FourierToyConfig {
            keep_fraction: 0.001,
            ..FourierToyConfig::default()
        }));
        assert!(bad(FourierToyConfig {
            side: 3,
            ..FourierToyConfig::default()
        }));
        assert!(bad(FourierToyConfig {
            keep_fraction: 0.0,
            ..FourierToyConfig::default()
        }));
        assert!(bad(FourierToyConfig {
            dims: 3,
            ..FourierToyConfig::default()
        }));
    }

    #[test]
    fn random_mask_depends_on_seed() {
        let a = build_fourier_toy(&FourierToyConfig::default()).unwrap();
        let b = build_fourier_toy(&FourierToyConfig::default()).unwrap();
        let c = build_fourier_toy(&FourierToyConfig {
            seed: 5,
            ..FourierToyConfig::default()
        })
        .unwrap();
        assert_eq!(a.mask, b.mask);
        assert_ne!(a.mask, c.mask);
    }
}
