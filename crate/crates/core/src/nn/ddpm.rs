//! Conditional DDPM null model `p_φ(β | α)`.

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::denoiser::{Conditioning, Denoiser, DenoiserBatch};
use super::normalize::Standardizer;
use super::schedule::DiffusionSchedule;
use super::tensor::Mat;
use super::train::{EpochSampler, LossLog, LossPoint};
use crate::error::{Error, Result};
use crate::rng::{self, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpmConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: usize,
    pub blocks: usize,
    pub time_dim: usize,
    pub conditioning: Conditioning,
    /// Standardize `α` and `β` per dimension before training.
    pub standardize: bool,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for DdpmConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            batch: 256,
            lr: 3e-4,
            t_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            hidden: 256,
            blocks: 2,
            time_dim: 64,
            conditioning: Conditioning::Concat,
            standardize: true,
            log_every: 100,
            seed: 0,
        }
    }
}

impl DdpmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.hidden == 0 || self.blocks == 0 {
            return Err(Error::InvalidConfig(
                "ddpm steps, batch, hidden and blocks must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("ddpm lr must be positive, got {}", self.lr)));
        }
        DiffusionSchedule::linear(self.t_steps, self.beta_start, self.beta_end).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpmModel {
    pub config: DdpmConfig,
    pub schedule: DiffusionSchedule,
    pub denoiser: Denoiser,
    pub alpha_norm: Standardizer,
    pub beta_norm: Standardizer,
}

pub struct DdpmTraining {
    pub model: DdpmModel,
    pub loss_history: Vec<LossPoint>,
    pub final_loss: f64,
}

fn check_dataset(alphas: &Mat, betas: &Mat) -> Result<()> {
    if alphas.rows() == 0 {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    crate::error::check_len("paired alpha/beta rows", alphas.rows(), betas.rows())
}

/// Untrained model with freshly initialized weights.
pub fn init_null_ddpm(r: usize, q: usize, config: &DdpmConfig) -> Result<DdpmModel> {
    config.validate()?;
    let schedule = DiffusionSchedule::linear(config.t_steps, config.beta_start, config.beta_end)?;
    let denoiser = Denoiser::new(
        q,
        r,
        config.time_dim,
        config.t_steps,
        config.hidden,
        config.blocks,
        config.conditioning,
        &mut rng::stream(config.seed, &[tags::NET_INIT]),
    );
    Ok(DdpmModel {
        config: config.clone(),
        schedule,
        denoiser,
        alpha_norm: Standardizer::identity(r),
        beta_norm: Standardizer::identity(q),
    })
}

/// Trains `ε_φ` by noise prediction: draw a batch `(α_i, β_i)`, a uniform
/// `t`, noise `ε`, form `β_t = √ᾱ_t β_i + √(1−ᾱ_t) ε` and step Adam on
/// `‖ε − ε_φ(β_t, α_i, t)‖²`. The recorded loss is the per-coordinate MSE.
pub fn train_null_ddpm(alphas: &Mat, betas: &Mat, config: &DdpmConfig) -> Result<DdpmTraining> {
    check_dataset(alphas, betas)?;
    let mut model = init_null_ddpm(alphas.cols(), betas.cols(), config)?;
    if config.standardize {
        model.alpha_norm = Standardizer::fit(alphas);
        model.beta_norm = Standardizer::fit(betas);
    }
    let a_std = model.alpha_norm.apply(alphas);
    let b_std = model.beta_norm.apply(betas);
    let q = betas.cols();
    let t_steps = config.t_steps;

    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &model.denoiser);
    let mut sampler = EpochSampler::new(alphas.rows(), rng::stream(config.seed, &[tags::TRAIN_BATCH]));
    let mut noise_rng = rng::stream(config.seed, &[tags::TRAIN_NOISE]);
    let mut log = LossLog::new(config.log_every);
    let mut final_loss = f64::NAN;
    let mut grad = model.denoiser.zeros_like();

    for step in 1..=config.steps {
        let idx = sampler.next_batch(config.batch);
        let cond = a_std.gather_rows(&idx);
        let x0 = b_std.gather_rows(&idx);
        let t: Vec<usize> = idx
            .iter()
            .map(|_| rand::Rng::random_range(&mut noise_rng, 1..=t_steps))
            .collect();
        let eps = Mat::from_vec(idx.len(), q, rng::normal_vec(&mut noise_rng, idx.len() * q));
        let mut x_t = x0;
        for (i, &ti) in t.iter().enumerate() {
            let ab = model.schedule.alpha_bar(ti);
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            for (x, e) in x_t.row_mut(i).iter_mut().zip(eps.row(i)) {
                *x = a * *x + b * e;
            }
        }
        let batch = DenoiserBatch {
            x_t: &x_t,
            cond: &cond,
            t: &t,
        };
        let (out, cache) = model.denoiser.forward_cached(&batch);
        let (half_sq, d_out) = super::mlp::squared_error(&out, &eps);
        let mse = 2.0 * half_sq / q as f64;
        log.record(step, mse)?;
        final_loss = mse;
        super::mlp::ParamSet::fill_zero(&mut grad);
        model.denoiser.backward(&cache, d_out, &mut grad);
        adam.update(&mut model.denoiser, &grad);
    }
    if !super::mlp::ParamSet::all_finite(&model.denoiser) {
        return Err(Error::TrainingDiverged { step: config.steps });
    }
    Ok(DdpmTraining {
        model,
        loss_history: log.finish(config.steps),
        final_loss,
    })
}

/// Ancestral reverse diffusion from `N(0, I_q)` over all `T` steps with
/// `σ_t² = β_t`. Returns `count × q` samples in the original `β` units.
pub fn sample_null_ddpm(model: &DdpmModel, alpha: &[f64], count: usize, seed: u64) -> Result<Mat> {
    let q = model.beta_norm.dim();
    crate::error::check_len("alpha", model.alpha_norm.dim(), alpha.len())?;
    if count == 0 {
        return Ok(Mat::zeros(0, q));
    }
    let cond = model.alpha_norm.apply_vec(alpha);
    let shared = model.denoiser.share_conditioning(&cond);
    let mut r = rng::stream(seed, &[tags::DDPM_SAMPLE]);
    let mut x = Mat::from_vec(count, q, rng::normal_vec(&mut r, count * q));
    let mut z = vec![0.0; count * q];
    for t in (1..=model.schedule.steps()).rev() {
        let eps = model.denoiser.predict_shared(&shared, &x, t);
        let (c_x, c_eps, sigma) = model.schedule.reverse_coefficients(t);
        if sigma > 0.0 {
            rng::fill_normal(&mut r, &mut z);
            for ((v, e), n) in x.as_mut_slice().iter_mut().zip(eps.as_slice()).zip(&z) {
                *v = c_x * *v - c_eps * e + sigma * n;
            }
        } else {
            for (v, e) in x.as_mut_slice().iter_mut().zip(eps.as_slice()) {
                *v = c_x * *v - c_eps * e;
            }
        }
    }
    model.beta_norm.invert_in_place(&mut x);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DdpmConfig {
        DdpmConfig {
            steps: 300,
            batch: 32,
            lr: 1e-3,
            t_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.1,
            hidden: 32,
            blocks: 2,
            time_dim: 16,
            ..DdpmConfig::default()
        }
    }

    fn toy_data(n: usize) -> (Mat, Mat) {
        let mut r = rng::stream(11, &[0]);
        let a = Mat::from_vec(n, 2, rng::normal_vec(&mut r, n * 2));
        let mut b = Mat::zeros(n, 3);
        for i in 0..n {
            let ai = a.row(i).to_vec();
            let row = b.row_mut(i);
            row[0] = ai[0] + 0.3 * rng::normal(&mut r);
            row[1] = ai[1] - ai[0];
            row[2] = 0.5 * rng::normal(&mut r);
        }
        (a, b)
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = DdpmConfig::default();
        assert_eq!((c.t_steps, c.hidden, c.blocks, c.batch), (1000, 256, 2, 256));
        assert_eq!((c.beta_start, c.beta_end, c.lr), (1e-4, 0.02, 3e-4));
        assert_eq!(c.conditioning, Conditioning::Concat);
    }

    #[test]
    fn training_is_deterministic_and_loss_decreases() {
        let (a, b) = toy_data(500);
        let run1 = train_null_ddpm(&a, &b, &small_config()).unwrap();
        let run2 = train_null_ddpm(&a, &b, &small_config()).unwrap();
        assert_eq!(run1.final_loss, run2.final_loss);
        assert_eq!(run1.model, run2.model);
        let h = &run1.loss_history;
        assert_eq!(h.len(), 3);
        assert!(h.last().unwrap().loss < h[0].loss);
    }

    #[test]
    fn sampling_contract() {
        let model = init_null_ddpm(2, 3, &small_config()).unwrap();
        assert_eq!(sample_null_ddpm(&model, &[0.1, 0.2], 0, 1).unwrap().rows(), 0);
        let s1 = sample_null_ddpm(&model, &[0.1, 0.2], 7, 3).unwrap();
        let s2 = sample_null_ddpm(&model, &[0.1, 0.2], 7, 3).unwrap();
        assert_eq!(s1, s2);
        assert_ne!(s1, sample_null_ddpm(&model, &[0.1, 0.2], 7, 4).unwrap());
        assert!(matches!(
            sample_null_ddpm(&model, &[0.1], 2, 0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn untrained_full_chain_stays_finite() {
        let config = DdpmConfig {
            hidden: 64,
            ..DdpmConfig::default()
        };
        let model = init_null_ddpm(4, 8, &config).unwrap();
        let s = sample_null_ddpm(&model, &[0.5, -0.5, 1.0, 0.0], 1000, 9).unwrap();
        assert_eq!((s.rows(), s.cols()), (1000, 8));
        assert!(s.is_finite());
    }

    #[test]
    fn point_mass_target_collapses() {
        let n = 400;
        let q = 4;
        let mut r = rng::stream(5, &[0]);
        let a = Mat::from_vec(n, 2, rng::normal_vec(&mut r, n * 2));
        let b = Mat::zeros(n, q);
        let config = DdpmConfig {
            steps: 15_000,
            t_steps: 1000,
            beta_end: 0.02,
            hidden: 64,
            ..small_config()
        };
        let trained = train_null_ddpm(&a, &b, &config).unwrap();
        let s = sample_null_ddpm(&trained.model, &[0.3, -0.2], 200, 1).unwrap();
        let bound = 0.05 * (q as f64).sqrt();
        for i in 0..s.rows() {
            let norm = s.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= bound, "sample {i} norm {norm}");
        }
    }

    #[test]
    fn rejects_empty_or_mismatched_data() {
        let cfg = small_config();
        assert!(matches!(
            train_null_ddpm(&Mat::zeros(0, 2), &Mat::zeros(0, 3), &cfg),
            Err(Error::InvalidConfig(_))
        ));
        assert!(train_null_ddpm(&Mat::zeros(3, 2), &Mat::zeros(4, 3), &cfg).is_err());
    }
}
