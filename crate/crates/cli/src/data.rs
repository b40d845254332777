//! Problem construction and the train/test datasets shared by every stage.

use nullcal::gaussian::{build_problem, sample_joint, GaussianProblemSpec};
use nullcal::nn::{GaussianConditional, Mat};
use nullcal::operator::{CoefficientPair, ForwardOperator, RangeNullBasis};
use nullcal::synthetic::{
    build_fourier_toy, build_patch_problem, sample_patch_sources, synth_images, FourierToyProblem, GroundTruthCase,
    NoiseLevel, PatchSourceProblem,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CliError, CliResult};
use crate::io::{csv_body, read_csv, RunDir};

pub const TRAIN_FILE: &str = "data/train.csv";
pub const TEST_FILE: &str = "data/test.csv";

/// Stage tags mixed into the top-level seed.
pub mod stage {
    pub const PROBLEM: u64 = 1;
    pub const DATA: u64 = 2;
    pub const RANGE: u64 = 3;
    pub const NULL_DDPM: u64 = 4;
    pub const NULL_VAE: u64 = 5;
    pub const SBC: u64 = 6;
    pub const MAP: u64 = 7;
    pub const SWEEP: u64 = 8;
    pub const REPORT: u64 = 9;
}

pub enum ProblemKind {
    Gaussian(GaussianProblemSpec),
    Fourier(FourierToyProblem),
    Patch(PatchSourceProblem),
}

pub struct Problem {
    pub kind: ProblemKind,
    pub operator: ForwardOperator,
    pub basis: RangeNullBasis,
}

impl Problem {
    /// Rebuilds the problem from the configuration alone.
    pub fn build(cfg: &ExperimentConfig) -> CliResult<Self> {
        match cfg.experiment {
            ExperimentKind::Gaussian => {
                let mut params = cfg.gaussian;
                params.seed = cfg.stage_seed(stage::PROBLEM, params.seed);
                let spec = build_problem(params).map_err(|e| CliError::Config(e.to_string()))?;
                let operator = ForwardOperator::new(spec.embedded_operator(), spec.sigma_y())?;
                let basis = spec.canonical_basis();
                Ok(Self {
                    kind: ProblemKind::Gaussian(spec),
                    operator,
                    basis,
                })
            }
            ExperimentKind::FourierToy => {
                let mut fc = cfg.fourier.clone();
                fc.seed = cfg.stage_seed(stage::PROBLEM, fc.seed);
                let toy = build_fourier_toy(&fc).map_err(|e| CliError::Config(e.to_string()))?;
                Ok(Self {
                    operator: toy.operator.clone(),
                    basis: toy.basis.clone(),
                    kind: ProblemKind::Fourier(toy),
                })
            }
            ExperimentKind::PatchSource => {
                let mut pc = cfg.patch.clone();
                pc.seed = cfg.stage_seed(stage::PROBLEM, pc.seed);
                let patch = build_patch_problem(&pc).map_err(|e| CliError::Config(e.to_string()))?;
                Ok(Self {
                    operator: patch.operator.clone(),
                    basis: patch.basis.clone(),
                    kind: ProblemKind::Patch(patch),
                })
            }
        }
    }

    pub fn r(&self) -> usize {
        self.basis.rank()
    }

    pub fn q(&self) -> usize {
        self.basis.null_dim()
    }

    pub fn n(&self) -> usize {
        self.operator.n()
    }

    /// Image width when the signal lives on a square grid.
    pub fn image_width(&self) -> Option<usize> {
        match &self.kind {
            ProblemKind::Fourier(t) if t.config.dims == 2 => Some(t.config.side),
            ProblemKind::Patch(p) if p.config.geometry == nullcal::synthetic::Geometry::Grid => {
                let side = (p.config.n_sources as f64).sqrt().round() as usize;
                (side * side == p.config.n_sources).then_some(side)
            }
            _ => None,
        }
    }

    pub fn gaussian(&self) -> Option<&GaussianProblemSpec> {
        match &self.kind {
            ProblemKind::Gaussian(spec) => Some(spec),
            _ => None,
        }
    }

    pub fn oracle_conditional(&self) -> Option<GaussianConditional> {
        self.gaussian().map(GaussianConditional::from_gaussian)
    }
}

/// Coefficient triples `(α*, β*, y)` for a run of cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub alphas: Mat,
    pub betas: Mat,
    pub ys: Mat,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.alphas.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pair(&self, i: usize) -> CoefficientPair {
        CoefficientPair {
            alpha: self.alphas.row(i).to_vec(),
            beta: self.betas.row(i).to_vec(),
        }
    }

    pub fn pairs(&self, limit: usize) -> Vec<CoefficientPair> {
        (0..self.len().min(limit)).map(|i| self.pair(i)).collect()
    }

    pub fn alpha_rows(&self, limit: usize) -> Vec<Vec<f64>> {
        (0..self.len().min(limit)).map(|i| self.alphas.row(i).to_vec()).collect()
    }

    fn column_names(r: usize, q: usize, n: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(r + q + n);
        names.extend((0..r).map(|i| format!("alpha_{i}")));
        names.extend((0..q).map(|i| format!("beta_{i}")));
        names.extend((0..n).map(|i| format!("y_{i}")));
        names
    }

    pub fn to_csv(&self) -> String {
        let names = Self::column_names(self.alphas.cols(), self.betas.cols(), self.ys.cols());
        csv_body(
            &names,
            (0..self.len()).map(|i| {
                let mut row = self.alphas.row(i).to_vec();
                row.extend_from_slice(self.betas.row(i));
                row.extend_from_slice(self.ys.row(i));
                row
            }),
        )
    }

    pub fn read(run: &RunDir, rel: &str, problem: &Problem) -> CliResult<Self> {
        let path = run.path(rel);
        let (names, rows) = read_csv(&path)?;
        let (r, q, n) = (problem.r(), problem.q(), problem.n());
        if names != Self::column_names(r, q, n) {
            return Err(CliError::Compatibility(format!(
                "{} has {} columns, the problem expects r={r}, q={q}, n={n}",
                path.display(),
                names.len()
            )));
        }
        let take = |off: usize, w: usize| {
            let slices: Vec<&[f64]> = rows.iter().map(|row| &row[off..off + w]).collect();
            Mat::from_rows(&slices, w)
        };
        Ok(Self {
            alphas: take(0, r),
            betas: take(r, q),
            ys: take(r + q, n),
        })
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let idx: Vec<usize> = range.collect();
        Self {
            alphas: self.alphas.gather_rows(&idx),
            betas: self.betas.gather_rows(&idx),
            ys: self.ys.gather_rows(&idx),
        }
    }
}

pub struct Generated {
    pub data: Dataset,
    /// Signals of the first few cases, for image previews.
    pub previews: Vec<Vec<f64>>,
}

const PREVIEWS: usize = 4;

pub fn generate(cfg: &ExperimentConfig, problem: &Problem) -> CliResult<Generated> {
    let count = cfg.dataset.count;
    let seed = cfg.stage_seed(stage::DATA, 0);
    let (r, q, n) = (problem.r(), problem.q(), problem.n());
    let from_cases = |cases: Vec<GroundTruthCase>| {
        let previews = cases.iter().take(PREVIEWS).map(|c| c.x.clone()).collect();
        let alphas: Vec<&[f64]> = cases.iter().map(|c| c.alpha_star.as_slice()).collect();
        let betas: Vec<&[f64]> = cases.iter().map(|c| c.beta_star.as_slice()).collect();
        let ys: Vec<&[f64]> = cases.iter().map(|c| c.y_noisy.as_slice()).collect();
        Generated {
            data: Dataset {
                alphas: Mat::from_rows(&alphas, r),
                betas: Mat::from_rows(&betas, q),
                ys: Mat::from_rows(&ys, n),
            },
            previews,
        }
    };
    match &problem.kind {
        ProblemKind::Gaussian(spec) => {
            let joint = sample_joint(spec, count, seed);
            let alphas: Vec<&[f64]> = joint.iter().map(|s| s.alpha.as_slice()).collect();
            let betas: Vec<&[f64]> = joint.iter().map(|s| s.beta.as_slice()).collect();
            let ys: Vec<&[f64]> = joint.iter().map(|s| s.y.as_slice()).collect();
            Ok(Generated {
                data: Dataset {
                    alphas: Mat::from_rows(&alphas, r),
                    betas: Mat::from_rows(&betas, q),
                    ys: Mat::from_rows(&ys, n),
                },
                previews: Vec::new(),
            })
        }
        ProblemKind::Fourier(toy) => {
            let images = synth_images(toy, count, seed)?;
            let noise = NoiseLevel::Sigma(toy.config.k_sigma);
            let cases = images
                .into_par_iter()
                .enumerate()
                .map(|(i, x)| {
                    let case_seed = nullcal::rng::derive_seed(seed, &[0xF0, i as u64]);
                    GroundTruthCase::from_signal(&toy.operator, &toy.basis, x, noise, case_seed)
                })
                .collect::<nullcal::Result<Vec<_>>>()?;
            Ok(from_cases(cases))
        }
        ProblemKind::Patch(patch) => {
            let cases = sample_patch_sources(patch, count, &cfg.patch_sampling, seed)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(from_cases(cases))
        }
    }
}

/// Splits by case index; the test split is the last `test_fraction` of cases.
pub fn split(cfg: &ExperimentConfig, data: &Dataset) -> (Dataset, Dataset) {
    let train = cfg.train_count().min(data.len());
    (data.slice(0..train), data.slice(train..data.len()))
}
