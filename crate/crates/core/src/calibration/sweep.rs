//! Noise-level sweeps of intrinsic versus total null uncertainty, and the
//! propagated-uncertainty bound `tr V(m(x̂_α)) ≤ L²·E‖x̂_α − x_α*‖²`.
//!
//! Sample noise is controlled with common random numbers: every draw for a
//! case reuses one sampler seed, so differences between conditioning values
//! reflect the model rather than Monte-Carlo noise. Measurement noise enters
//! in antithetic pairs `±ε`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::NullModel;
use crate::operator::{ForwardOperator, RangeNullBasis};
use crate::rng::{self, tags};
use crate::synthetic::FourierToyProblem;

const CRN_STREAM: u64 = 0;
const INTRINSIC_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const PROBE_STREAM: u64 = 3;

/// How measurement noise moves the identifiable coefficients:
/// `α̂ = α* + σ·P·ε` with `ε ∼ N(0, I_n)`.
#[derive(Debug, Clone)]
pub struct SweepProblem {
    pub basis: RangeNullBasis,
    /// `r × n` map `V_rᵀ·A⁺`.
    pub noise_map: DMatrix<f64>,
}

impl SweepProblem {
    pub fn from_operator(operator: &ForwardOperator, basis: &RangeNullBasis) -> Result<Self> {
        check_len("basis dimension", operator.p(), basis.p())?;
        let pinv = operator
            .matrix()
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::DegenerateInput(format!("pseudo-inverse failed: {e}")))?;
        Ok(Self {
            noise_map: basis.v_r().transpose() * pinv,
            basis: basis.clone(),
        })
    }

    pub fn from_fourier(problem: &FourierToyProblem) -> Self {
        Self {
            noise_map: problem.basis.v_r().transpose() * problem.operator.matrix().transpose(),
            basis: problem.basis.clone(),
        }
    }

    fn perturbed(&self, alpha: &[f64], sigma: f64, eps: &[f64]) -> Vec<f64> {
        let shift = &self.noise_map * DVector::from_column_slice(eps);
        alpha.iter().zip(shift.iter()).map(|(a, s)| a + sigma * s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub sigmas: Vec<f64>,
    /// Noise draws per case and level; rounded up to an even count.
    pub noise_draws: usize,
    /// Null samples per conditioning value.
    pub samples: usize,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.025, 0.05, 0.1, 0.2, 0.4],
            noise_draws: 8,
            samples: 100,
            seed: 0,
        }
    }
}

impl SweepOptions {
    fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("sigma list must be nonempty and nonnegative".into()));
        }
        if self.noise_draws < 2 || self.samples < 2 {
            return Err(Error::InvalidConfig("sweep needs at least 2 noise draws and 2 samples".into()));
        }
        Ok(())
    }

    fn pairs(&self) -> usize {
        self.noise_draws.div_ceil(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub intrinsic_mean_var: f64,
    pub intrinsic_se: f64,
    pub total_mean_var: f64,
    pub total_se: f64,
    /// `total − intrinsic`, estimated with common random numbers.
    pub excess: f64,
    pub excess_se: f64,
    /// Standard error of the per-case difference to the `σ = 0` intrinsic value.
    pub intrinsic_shift_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub cases: usize,
    pub samples: usize,
    pub noise_draws: usize,
    /// Least-squares slope of `log(excess)` on `log σ` over levels with `σ > 0`
    /// and positive excess; `None` with fewer than two such levels.
    pub excess_slope: Option<f64>,
}

struct Moments {
    mean: Vec<f64>,
    /// Mean per-pixel variance `tr Cov(β) / p`.
    per_pixel_var: f64,
}

fn moments(null: &NullModel, alpha: &[f64], k: usize, seed: u64, p: usize) -> Result<Moments> {
    let samples = null.sample(alpha, k, seed)?;
    Ok(Moments {
        mean: samples.column_means(),
        per_pixel_var: samples.column_variances().iter().sum::<f64>() / p as f64,
    })
}

/// Per-case `(mean_j w_j, Σ_i Var_j m_{j,i})` over noise draws at one level.
fn noisy_terms(
    null: &NullModel,
    problem: &SweepProblem,
    alpha: &[f64],
    sigma: f64,
    eps: &[Vec<f64>],
    k: usize,
    crn_seed: u64,
) -> Result<(f64, f64)> {
    let p = problem.basis.p();
    let mut means = Vec::with_capacity(2 * eps.len());
    let mut w = 0.0;
    for e in eps {
        for sign in [1.0, -1.0] {
            let a = problem.perturbed(alpha, sign * sigma, e);
            let m = moments(null, &a, k, crn_seed, p)?;
            w += m.per_pixel_var;
            means.push(m.mean);
        }
    }
    let j = means.len() as f64;
    w /= j;
    Ok((w, trace_variance(&means)))
}

/// `Σ_i` of the unbiased variance of coordinate `i` across `rows`.
fn trace_variance(rows: &[Vec<f64>]) -> f64 {
    let j = rows.len();
    if j < 2 {
        return 0.0;
    }
    let q = rows[0].len();
    (0..q)
        .map(|i| {
            let mu = rows.iter().map(|r| r[i]).sum::<f64>() / j as f64;
            rows.iter().map(|r| (r[i] - mu).powi(2)).sum::<f64>() / (j - 1) as f64
        })
        .sum()
}

fn noise_vectors(seed: u64, case: usize, pairs: usize, n: usize) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, &[tags::SWEEP, NOISE_STREAM, case as u64]);
    (0..pairs).map(|_| rng::normal_vec(&mut r, n)).collect()
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx)
}

struct CaseSweep {
    intrinsic: Vec<f64>,
    total: Vec<f64>,
    excess: Vec<f64>,
}

pub fn noise_sweep(
    null: &NullModel,
    problem: &SweepProblem,
    alphas: &[Vec<f64>],
    options: &SweepOptions,
) -> Result<SweepReport> {
    options.validate()?;
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("noise sweep needs at least one case".into()));
    }
    let (r, n, p) = (problem.basis.rank(), problem.noise_map.ncols(), problem.basis.p());
    check_len("null model conditioning", r, null.r())?;
    check_len("null model output", problem.basis.null_dim(), null.q())?;
    let k = options.samples;
    let per_case: Vec<CaseSweep> = alphas
        .par_iter()
        .enumerate()
        .map(|(c, alpha)| {
            check_len("alpha*", r, alpha.len())?;
            let crn = rng::derive_seed(options.seed, &[tags::SWEEP, CRN_STREAM, c as u64]);
            let w_star = moments(null, alpha, k, crn, p)?.per_pixel_var;
            let eps = noise_vectors(options.seed, c, options.pairs(), n);
            let mut out = CaseSweep {
                intrinsic: Vec::new(),
                total: Vec::new(),
                excess: Vec::new(),
            };
            for (s, &sigma) in options.sigmas.iter().enumerate() {
                let own = rng::derive_seed(options.seed, &[tags::SWEEP, INTRINSIC_STREAM, c as u64, s as u64]);
                out.intrinsic.push(moments(null, alpha, k, own, p)?.per_pixel_var);
                let (w, trace) = noisy_terms(null, problem, alpha, sigma, &eps, k, crn)?;
                let total = w + trace / p as f64;
                out.total.push(total);
                out.excess.push(total - w_star);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let column = |f: &dyn Fn(&CaseSweep) -> f64| -> Vec<f64> { per_case.iter().map(f).collect() };
    let rows: Vec<SweepRow> = options
        .sigmas
        .iter()
        .enumerate()
        .map(|(s, &sigma)| {
            let (intrinsic_mean_var, intrinsic_se) = mean_se(&column(&|c| c.intrinsic[s]));
            let (total_mean_var, total_se) = mean_se(&column(&|c| c.total[s]));
            let (excess, excess_se) = mean_se(&column(&|c| c.excess[s]));
            let (_, intrinsic_shift_se) = mean_se(&column(&|c| c.intrinsic[s] - c.intrinsic[0]));
            SweepRow {
                sigma,
                intrinsic_mean_var,
                intrinsic_se,
                total_mean_var,
                total_se,
                excess,
                excess_se,
                intrinsic_shift_se,
            }
        })
        .collect();
    let (lx, ly): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|row| row.sigma > 0.0 && row.excess > 0.0)
        .map(|row| (row.sigma.ln(), row.excess.ln()))
        .unzip();
    Ok(SweepReport {
        excess_slope: fit_slope(&lx, &ly),
        rows,
        cases: alphas.len(),
        samples: k,
        noise_draws: 2 * options.pairs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub sigma: f64,
    pub probes: usize,
    /// Largest spectral norm of the finite-difference Jacobian of `m` over probes.
    pub lipschitz_estimate: f64,
    /// `tr V(m(x̂_α))`, averaged over probes.
    pub lhs: f64,
    /// `L²·E‖x̂_α − x_α*‖²`, averaged over probes.
    pub rhs: f64,
}

impl BoundReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= slack * self.rhs
    }
}

/// Spectral norm of the central-difference Jacobian of the null conditional
/// mean at `alpha`, taken along a random orthonormal basis with step `h`.
pub fn local_lipschitz(null: &NullModel, alpha: &[f64], h: f64, samples: usize, seed: u64) -> Result<f64> {
    let r = alpha.len();
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {h}")));
    }
    let rotation = crate::linalg::random_orthogonal(&mut rng::stream(seed, &[tags::LIPSCHITZ]), r);
    let crn = rng::derive_seed(seed, &[tags::LIPSCHITZ, CRN_STREAM]);
    let q = null.q();
    let mut jac = DMatrix::zeros(q, r);
    for d in 0..r {
        let shifted = |sign: f64| -> Vec<f64> {
            alpha
                .iter()
                .enumerate()
                .map(|(i, a)| a + sign * h * rotation[(i, d)])
                .collect()
        };
        let plus = null.sample(&shifted(1.0), samples, crn)?.column_means();
        let minus = null.sample(&shifted(-1.0), samples, crn)?.column_means();
        for i in 0..q {
            jac[(i, d)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac.singular_values().max())
}

pub fn propagated_bound_check(
    null: &NullModel,
    problem: &SweepProblem,
    alphas: &[Vec<f64>],
    sigma: f64,
    probes: usize,
    options: &SweepOptions,
) -> Result<BoundReport> {
    options.validate()?;
    if probes < 10 {
        return Err(Error::InvalidConfig(format!("bound check needs at least 10 probes, got {probes}")));
    }
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("bound check needs at least one case".into()));
    }
    let (r, n) = (problem.basis.rank(), problem.noise_map.ncols());
    check_len("null model conditioning", r, null.r())?;
    let k = options.samples;
    let per_probe: Vec<(f64, f64, f64)> = (0..probes)
        .into_par_iter()
        .map(|i| {
            let alpha = &alphas[i % alphas.len()];
            check_len("alpha*", r, alpha.len())?;
            let probe_seed = rng::derive_seed(options.seed, &[tags::LIPSCHITZ, PROBE_STREAM, i as u64]);
            let h = if sigma > 0.0 { sigma } else { 1e-3 };
            let lip = local_lipschitz(null, alpha, h, k, probe_seed)?;
            let eps = noise_vectors(probe_seed, i, options.pairs(), n);
            let (_, trace) = noisy_terms(null, problem, alpha, sigma, &eps, k, probe_seed)?;
            let shift = eps
                .iter()
                .map(|e| {
                    let d = &problem.noise_map * DVector::from_column_slice(e);
                    sigma * sigma * d.norm_squared()
                })
                .sum::<f64>()
                / eps.len() as f64;
            Ok((lip, trace, shift))
        })
        .collect::<Result<_>>()?;
    let lipschitz_estimate = per_probe.iter().map(|t| t.0).fold(0.0, f64::max);
    let lhs = per_probe.iter().map(|t| t.1).sum::<f64>() / probes as f64;
    let mean_shift = per_probe.iter().map(|t| t.2).sum::<f64>() / probes as f64;
    Ok(BoundReport {
        sigma,
        probes,
        lipschitz_estimate,
        lhs,
        rhs: lipschitz_estimate.powi(2) * mean_shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{build_problem, GaussianParams};
    use crate::nn::{GaussianConditional, Mat};
    use crate::synthetic::{build_fourier_toy, FourierToyConfig};

    fn fourier_oracle(seed: u64) -> (SweepProblem, NullModel, Vec<Vec<f64>>) {
        let toy = build_fourier_toy(&FourierToyConfig::default()).unwrap();
        let problem = SweepProblem::from_fourier(&toy);
        let (r, q) = (toy.basis.rank(), toy.basis.null_dim());
        let mut gen = rng::stream(seed, &[0]);
        let map = Mat::from_vec(q, r, rng::normal_vec(&mut gen, q * r).iter().map(|v| 0.3 * v).collect());
        let chol = Mat::from_vec(
            q,
            q,
            (0..q * q).map(|k| if k / q == k % q { 0.5 } else { 0.0 }).collect(),
        );
        let null = NullModel::Oracle(GaussianConditional::new(map, vec![0.0; q], chol).unwrap());
        let alphas = (0..12).map(|_| rng::normal_vec(&mut gen, r)).collect();
        (problem, null, alphas)
    }

    #[test]
    fn fourier_noise_map_is_projected_inverse() {
        let toy = build_fourier_toy(&FourierToyConfig::default()).unwrap();
        let a = SweepProblem::from_fourier(&toy).noise_map;
        let b = SweepProblem::from_operator(&toy.operator, &toy.basis).unwrap().noise_map;
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn linear_oracle_sweep_has_quadratic_excess() {
        let (problem, null, alphas) = fourier_oracle(1);
        let opts = SweepOptions {
            samples: 50,
            ..SweepOptions::default()
        };
        let rep = noise_sweep(&null, &problem, &alphas, &opts).unwrap();
        let zero = &rep.rows[0];
        assert!(zero.excess.abs() < 1e-12);
        assert!((zero.total_mean_var - zero.intrinsic_mean_var).abs() <= 3.0 * (zero.total_se + zero.intrinsic_se));
        for row in &rep.rows {
            assert!((row.intrinsic_mean_var - zero.intrinsic_mean_var).abs() <= 3.0 * row.intrinsic_shift_se.max(1e-15));
        }
        for w in rep.rows.windows(2) {
            assert!(w[1].total_mean_var >= w[0].total_mean_var);
        }
        let slope = rep.excess_slope.unwrap();
        assert!((slope - 2.0).abs() < 0.05, "{slope}");
    }

    #[test]
    fn lipschitz_of_linear_mean_is_its_spectral_norm() {
        let spec = build_problem(GaussianParams::default()).unwrap();
        let null = NullModel::Oracle(GaussianConditional::from_gaussian(&spec));
        let expect = spec.c().singular_values().max();
        let est = local_lipschitz(&null, &vec![0.1; spec.r()], 0.05, 20, 3).unwrap();
        assert!((est / expect - 1.0).abs() < 0.1, "{est} vs {expect}");
    }

    #[test]
    fn bound_holds_for_linear_oracle() {
        let (problem, null, alphas) = fourier_oracle(2);
        let opts = SweepOptions {
            samples: 20,
            ..SweepOptions::default()
        };
        let zero = propagated_bound_check(&null, &problem, &alphas, 0.0, 10, &opts).unwrap();
        assert!(zero.lhs <= 1e-20);
        for sigma in [0.05, 0.1, 0.2] {
            let rep = propagated_bound_check(&null, &problem, &alphas, sigma, 10, &opts).unwrap();
            assert!(rep.holds(1.2), "{rep:?}");
            assert!(rep.lhs > 0.0);
        }
        assert!(propagated_bound_check(&null, &problem, &alphas, 0.1, 5, &opts).is_err());
    }

    #[test]
    fn slope_fit() {
        let x: Vec<f64> = [0.1f64, 0.2, 0.4].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [0.1f64, 0.2, 0.4].iter().map(|v| (3.0 * v * v).ln()).collect();
        assert!((fit_slope(&x, &y).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_slope(&[1.0], &[1.0]).is_none());
    }
}
