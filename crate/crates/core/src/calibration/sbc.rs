//! Simulation-based calibration of a null-model conditional.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use super::stats::{evaluate_statistic, TestStatistic};
use crate::error::{check_len, Error, Result};
use crate::nn::NullModel;
use crate::operator::CoefficientPair;
use crate::rng::{self, tags};

pub const DEFAULT_BINS: usize = 20;
pub const BAND_LEVEL: f64 = 0.99;
/// Tie frequency above which a report is flagged.
pub const TIE_FLAG_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SbcOptions {
    pub samples_per_case: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for SbcOptions {
    fn default() -> Self {
        Self {
            samples_per_case: 200,
            bins: DEFAULT_BINS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Per-bin interval on counts, and the same interval as densities.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankBand {
    pub level: f64,
    pub method: String,
    pub lower: Vec<u64>,
    pub upper: Vec<u64>,
    pub lower_density: Vec<f64>,
    pub upper_density: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SbcReport {
    pub statistic: TestStatistic,
    pub samples_per_case: usize,
    pub case_count: usize,
    pub bins: usize,
    pub ranks: Vec<usize>,
    pub normalized_ranks: Vec<f64>,
    pub histogram: Vec<u64>,
    /// Probability of each bin under uniform ranks on `{0, …, L}`.
    pub bin_probabilities: Vec<f64>,
    /// Histogram scaled so a calibrated sampler has density 1.
    pub densities: Vec<f64>,
    pub band: RankBand,
    pub chi_square: ChiSquareTest,
    pub mean_normalized_rank: f64,
    pub ties: usize,
    pub tie_flag: bool,
}

impl SbcReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.chi_square.p_value > alpha
    }

    /// Signed departure of the mean normalized rank from the uniform value ½.
    pub fn mean_rank_deviation(&self) -> f64 {
        self.mean_normalized_rank - 0.5
    }
}

/// SBC reports for several statistics computed from shared samples, plus
/// the mean per-dimension sample variance across cases.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SbcOutcome {
    pub reports: Vec<SbcReport>,
    pub mean_sample_variance: Vec<f64>,
}

/// Strict less-than rank of `truth` among `samples`, and the number of ties.
pub fn strict_rank(truth: f64, samples: &[f64]) -> (usize, usize) {
    samples.iter().fold((0, 0), |(below, ties), &s| {
        (below + usize::from(s < truth), ties + usize::from(s == truth))
    })
}

pub fn rank_bin(rank: usize, l: usize, bins: usize) -> usize {
    ((rank * bins) / l).min(bins - 1)
}

/// Exact probability of each bin when the rank is uniform on `{0, …, L}`.
pub fn bin_probabilities(l: usize, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for r in 0..=l {
        counts[rank_bin(r, l, bins)] += 1;
    }
    counts.iter().map(|&c| c as f64 / (l + 1) as f64).collect()
}

/// Central binomial interval on a bin count at the given level.
pub fn binomial_band(n: usize, p: f64, level: f64) -> (u64, u64) {
    if p <= 0.0 {
        return (0, 0);
    }
    if p >= 1.0 {
        return (n as u64, n as u64);
    }
    let dist = Binomial::new(p, n as u64).expect("valid binomial parameters");
    let tail = 0.5 * (1.0 - level);
    let quantile = |prob: f64| (0..=n as u64).find(|&k| dist.cdf(k) >= prob).unwrap_or(n as u64);
    (quantile(tail), quantile(1.0 - tail))
}

pub fn chi_square_uniformity(histogram: &[u64], probabilities: &[f64]) -> ChiSquareTest {
    let n: u64 = histogram.iter().sum();
    let statistic = histogram
        .iter()
        .zip(probabilities)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| {
            let e = n as f64 * p;
            (o as f64 - e).powi(2) / e
        })
        .sum::<f64>();
    let dof = histogram.len().saturating_sub(1).max(1);
    let p_value = if n == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .expect("positive dof")
            .sf(statistic)
    };
    ChiSquareTest {
        statistic,
        dof,
        p_value,
    }
}

/// Builds a report from ranks already computed.
pub fn report_from_ranks(
    statistic: TestStatistic,
    ranks: Vec<usize>,
    l: usize,
    bins: usize,
    ties: usize,
) -> SbcReport {
    let n = ranks.len();
    let mut histogram = vec![0u64; bins];
    for &r in &ranks {
        histogram[rank_bin(r, l, bins)] += 1;
    }
    let probs = bin_probabilities(l, bins);
    let scale = |count: f64, p: f64| if n == 0 || p == 0.0 { 0.0 } else { count / (n as f64 * p) };
    let densities = histogram
        .iter()
        .zip(&probs)
        .map(|(&c, &p)| scale(c as f64, p))
        .collect();
    let (lower, upper): (Vec<u64>, Vec<u64>) =
        probs.iter().map(|&p| binomial_band(n, p, BAND_LEVEL)).unzip();
    let band = RankBand {
        level: BAND_LEVEL,
        method: "exact binomial quantiles".into(),
        lower_density: lower.iter().zip(&probs).map(|(&c, &p)| scale(c as f64, p)).collect(),
        upper_density: upper.iter().zip(&probs).map(|(&c, &p)| scale(c as f64, p)).collect(),
        lower,
        upper,
    };
    let normalized_ranks: Vec<f64> = ranks.iter().map(|&r| r as f64 / l as f64).collect();
    let mean_normalized_rank = if n == 0 {
        0.5
    } else {
        normalized_ranks.iter().sum::<f64>() / n as f64
    };
    SbcReport {
        statistic,
        samples_per_case: l,
        case_count: n,
        bins,
        chi_square: chi_square_uniformity(&histogram, &probs),
        ranks,
        normalized_ranks,
        histogram,
        bin_probabilities: probs,
        densities,
        band,
        mean_normalized_rank,
        ties,
        tie_flag: n > 0 && ties as f64 > TIE_FLAG_FRACTION * (n * l) as f64,
    }
}

fn with_case(case: usize, err: Error) -> Error {
    match err {
        Error::DegenerateInput(msg) => Error::DegenerateInput(format!("case {case}: {msg}")),
        other => other,
    }
}

struct CaseResult {
    ranks: Vec<usize>,
    ties: Vec<usize>,
    variance: Vec<f64>,
}

/// Runs SBC for every statistic in `stats`, drawing `L` samples per case once.
///
/// Case `i` samples with seed `derive_seed(seed, [SBC_CASE, i])`, so the result
/// does not depend on how cases are scheduled across threads.
pub fn sbc_run_multi(
    sampler: &NullModel,
    truth: &[CoefficientPair],
    stats: &[TestStatistic],
    options: &SbcOptions,
) -> Result<SbcOutcome> {
    let l = options.samples_per_case;
    if l < 2 {
        return Err(Error::InvalidConfig(format!("SBC needs L >= 2 samples per case, got {l}")));
    }
    if options.bins == 0 {
        return Err(Error::InvalidConfig("SBC needs at least one bin".into()));
    }
    if truth.is_empty() {
        return Err(Error::InvalidConfig("SBC truth source is empty".into()));
    }
    if stats.is_empty() {
        return Err(Error::InvalidConfig("no SBC statistic requested".into()));
    }
    for pair in truth {
        check_len("SBC alpha*", sampler.r(), pair.alpha.len())?;
        check_len("SBC beta*", sampler.q(), pair.beta.len())?;
    }
    let cases: Vec<CaseResult> = truth
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let seed = rng::derive_seed(options.seed, &[tags::SBC_CASE, i as u64]);
            let samples = sampler.sample(&pair.alpha, l, seed)?;
            let mut ranks = Vec::with_capacity(stats.len());
            let mut ties = Vec::with_capacity(stats.len());
            for &stat in stats {
                let t_true = evaluate_statistic(stat, &pair.beta).map_err(|e| with_case(i, e))?;
                let values = (0..l)
                    .map(|k| evaluate_statistic(stat, samples.row(k)))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| with_case(i, e))?;
                let (rank, tie) = strict_rank(t_true, &values);
                ranks.push(rank);
                ties.push(tie);
            }
            Ok(CaseResult {
                ranks,
                ties,
                variance: samples.column_variances(),
            })
        })
        .collect::<Result<_>>()?;

    let reports = stats
        .iter()
        .enumerate()
        .map(|(s, &stat)| {
            let ranks = cases.iter().map(|c| c.ranks[s]).collect();
            let ties = cases.iter().map(|c| c.ties[s]).sum();
            report_from_ranks(stat, ranks, l, options.bins, ties)
        })
        .collect();
    let mut mean_sample_variance = vec![0.0; sampler.q()];
    for c in &cases {
        mean_sample_variance
            .iter_mut()
            .zip(&c.variance)
            .for_each(|(m, v)| *m += v);
    }
    mean_sample_variance
        .iter_mut()
        .for_each(|m| *m /= cases.len() as f64);
    Ok(SbcOutcome {
        reports,
        mean_sample_variance,
    })
}

pub fn sbc_run(
    sampler: &NullModel,
    truth: &[CoefficientPair],
    stat: TestStatistic,
    options: &SbcOptions,
) -> Result<SbcReport> {
    Ok(sbc_run_multi(sampler, truth, &[stat], options)?
        .reports
        .remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{build_problem, sample_joint, GaussianParams};
    use crate::nn::GaussianConditional;

    fn oracle_setup(cases: usize) -> (GaussianConditional, Vec<CoefficientPair>) {
        let spec = build_problem(GaussianParams::default()).unwrap();
        let truth = sample_joint(&spec, cases, 11)
            .into_iter()
            .map(|s| CoefficientPair {
                alpha: s.alpha,
                beta: s.beta,
            })
            .collect();
        (GaussianConditional::from_gaussian(&spec), truth)
    }

    #[test]
    fn strict_rank_counts_ties_separately() {
        assert_eq!(strict_rank(2.0, &[1.0, 2.0, 3.0, 0.5]), (2, 1));
        assert_eq!(strict_rank(-1.0, &[0.0, 1.0]), (0, 0));
        assert_eq!(strict_rank(9.0, &[0.0, 1.0]), (2, 0));
    }

    #[test]
    fn bin_probabilities_are_exact() {
        let p = bin_probabilities(200, 20);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 10.0 / 201.0).abs() < 1e-15);
        assert!((p[19] - 11.0 / 201.0).abs() < 1e-15);
        assert_eq!(rank_bin(200, 200, 20), 19);
        assert_eq!(rank_bin(0, 200, 20), 0);
    }

    #[test]
    fn band_covers_expected_count() {
        let (lo, hi) = binomial_band(500, 0.05, 0.99);
        assert!(lo < 25 && hi > 25);
        assert!(lo >= 10 && hi <= 42, "{lo} {hi}");
    }

    #[test]
    fn exact_oracle_is_uniform_for_both_statistics() {
        let (cond, truth) = oracle_setup(500);
        let out = sbc_run_multi(
            &NullModel::Oracle(cond),
            &truth,
            &[TestStatistic::L2Norm, TestStatistic::PeakRatio],
            &SbcOptions::default(),
        )
        .unwrap();
        for rep in &out.reports {
            assert!(rep.chi_square.p_value > 0.01, "{:?} {}", rep.statistic, rep.chi_square.p_value);
            assert_eq!(rep.histogram.iter().sum::<u64>(), 500);
            assert!(rep.ranks.iter().all(|&r| r <= 200));
            assert_eq!(rep.chi_square.dof, 19);
            assert!(!rep.tie_flag);
        }
    }

    #[test]
    fn dispersion_errors_move_rank_mass() {
        let (cond, truth) = oracle_setup(500);
        for (scale, under) in [(0.25, true), (4.0, false), (0.5 * 0.5, true), (2.0 * 2.0, false)] {
            let model = NullModel::scaled_oracle(cond.clone(), scale).unwrap();
            let rep = sbc_run(&model, &truth, TestStatistic::L2Norm, &SbcOptions::default()).unwrap();
            if under {
                assert!(rep.mean_normalized_rank > 0.8, "{scale}: {}", rep.mean_normalized_rank);
            } else {
                assert!(rep.mean_normalized_rank < 0.2, "{scale}: {}", rep.mean_normalized_rank);
            }
            assert!(rep.chi_square.p_value < 0.01);
        }
    }

    #[test]
    fn parallel_and_serial_agree() {
        let (cond, truth) = oracle_setup(40);
        let model = NullModel::Oracle(cond);
        let opts = SbcOptions {
            samples_per_case: 50,
            ..SbcOptions::default()
        };
        let a = sbc_run(&model, &truth, TestStatistic::L2Norm, &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sbc_run(&model, &truth, TestStatistic::L2Norm, &opts).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_statistic_reports_case() {
        let cond = GaussianConditional::point_mass(crate::nn::Mat::zeros(2, 1));
        let truth = vec![CoefficientPair {
            alpha: vec![1.0],
            beta: vec![0.5, 0.5],
        }];
        let err = sbc_run(
            &NullModel::Oracle(cond),
            &truth,
            TestStatistic::PeakRatio,
            &SbcOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(ref m) if m.contains("case 0")));
    }

    #[test]
    fn invalid_options_rejected() {
        let (cond, truth) = oracle_setup(3);
        let model = NullModel::Oracle(cond);
        let opts = SbcOptions {
            samples_per_case: 1,
            ..SbcOptions::default()
        };
        assert!(sbc_run(&model, &truth, TestStatistic::L2Norm, &opts).is_err());
        assert!(sbc_run(&model, &[], TestStatistic::L2Norm, &SbcOptions::default()).is_err());
    }
}
