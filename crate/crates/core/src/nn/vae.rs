//! Conditional VAE null model: encoder `(β, α) → (μ_z, log σ_z)`, decoder
//! `(z, α) → β̂` with a fixed unit observation scale.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::mlp::{squared_error, Activation, Mlp, ParamSet};
use super::normalize::Standardizer;
use super::tensor::Mat;
use super::train::{LossLog, LossPoint};
use crate::error::{check_len, Error, Result};
use crate::rng::{self, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub latent_dim: usize,
    pub kl_weight: f64,
    pub hidden: usize,
    pub blocks: usize,
    pub standardize: bool,
    /// Add the unit-variance observation noise of the Gaussian decoder when
    /// sampling; when false the decoder mean is returned. Coordinates that were
    /// constant in the training data never receive noise.
    pub sample_observation_noise: bool,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 256,
            lr: 1e-3,
            latent_dim: 16,
            kl_weight: 1.0,
            hidden: 256,
            blocks: 2,
            standardize: true,
            sample_observation_noise: true,
            log_every: 100,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.latent_dim == 0 || self.hidden == 0 || self.blocks == 0 {
            return Err(Error::InvalidConfig(
                "vae epochs, batch, latent_dim, hidden and blocks must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("vae lr must be positive, got {}", self.lr)));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "vae kl_weight must be nonnegative, got {}",
                self.kl_weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeNets {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl VaeNets {
    pub fn new(q: usize, r: usize, config: &VaeConfig) -> Self {
        let mut rng = rng::stream(config.seed, &[tags::NET_INIT]);
        let hidden = vec![config.hidden; config.blocks];
        let mut enc = vec![q + r];
        enc.extend(&hidden);
        enc.push(2 * config.latent_dim);
        let mut dec = vec![config.latent_dim + r];
        dec.extend(&hidden);
        dec.push(q);
        Self {
            encoder: Mlp::new(&enc, Activation::Silu, &mut rng),
            decoder: Mlp::new(&dec, Activation::Silu, &mut rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim() / 2
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }

    fn encode(&self, beta: &Mat, alpha: &Mat) -> Mat {
        self.encoder.forward(&concat(beta, alpha))
    }

    /// Negative ELBO per example, `½‖β − dec(z, α)‖² + λ·KL(q(z|β,α) ‖ N(0, I))`,
    /// with the reparameterization noise `eps` supplied by the caller.
    /// Returns `(loss, reconstruction part, gradient)`.
    pub fn loss_and_grad(
        &self,
        beta: &Mat,
        alpha: &Mat,
        eps: &Mat,
        kl_weight: f64,
    ) -> (f64, f64, VaeNets) {
        let l = self.latent_dim();
        let b = beta.rows() as f64;
        let (enc_out, enc_cache) = self.encoder.forward_cached(&concat(beta, alpha));
        let mut z = Mat::zeros(beta.rows(), l);
        let mut kl = 0.0;
        for i in 0..beta.rows() {
            let e = enc_out.row(i);
            for j in 0..l {
                let (mu, s) = (e[j], e[l + j]);
                z.set(i, j, mu + s.exp() * eps.get(i, j));
                kl += 0.5 * (mu * mu + (2.0 * s).exp() - 1.0 - 2.0 * s);
            }
        }
        kl /= b;
        let (dec_out, dec_cache) = self.decoder.forward_cached(&concat(&z, alpha));
        let (recon, d_dec) = squared_error(&dec_out, beta);
        let mut grad = self.zeros_like();
        let d_dec_in = self
            .decoder
            .backward(&dec_cache, d_dec, &mut grad.decoder, true)
            .expect("decoder input gradient");
        let mut d_enc = Mat::zeros(beta.rows(), 2 * l);
        for i in 0..beta.rows() {
            let e = enc_out.row(i);
            for j in 0..l {
                let (mu, s) = (e[j], e[l + j]);
                let dz = d_dec_in.get(i, j);
                d_enc.set(i, j, dz + kl_weight * mu / b);
                d_enc.set(
                    i,
                    l + j,
                    dz * eps.get(i, j) * s.exp() + kl_weight * ((2.0 * s).exp() - 1.0) / b,
                );
            }
        }
        self.encoder.backward(&enc_cache, d_enc, &mut grad.encoder, false);
        (recon + kl_weight * kl, recon, grad)
    }
}

impl ParamSet for VaeNets {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.encoder.blocks();
        b.extend(self.decoder.blocks());
        b
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.encoder.blocks_mut();
        b.extend(self.decoder.blocks_mut());
        b
    }
}

fn concat(left: &Mat, right: &Mat) -> Mat {
    let mut out = Mat::zeros(left.rows(), left.cols() + right.cols());
    out.set_columns(0, left);
    out.set_columns(left.cols(), right);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub nets: VaeNets,
    pub alpha_norm: Standardizer,
    pub beta_norm: Standardizer,
}

pub struct VaeTraining {
    pub model: VaeModel,
    pub loss_history: Vec<LossPoint>,
    pub final_loss: f64,
}

pub fn train_null_vae(alphas: &Mat, betas: &Mat, config: &VaeConfig) -> Result<VaeTraining> {
    config.validate()?;
    if alphas.rows() == 0 {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    check_len("paired alpha/beta rows", alphas.rows(), betas.rows())?;
    let (q, r) = (betas.cols(), alphas.cols());
    let (alpha_norm, beta_norm) = if config.standardize {
        (Standardizer::fit(alphas), Standardizer::fit(betas))
    } else {
        (Standardizer::identity(r), Standardizer::identity(q))
    };
    let a_std = alpha_norm.apply(alphas);
    let b_std = beta_norm.apply(betas);
    let mut nets = VaeNets::new(q, r, config);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &nets);
    let mut order_rng = rng::stream(config.seed, &[tags::TRAIN_BATCH]);
    let mut noise_rng = rng::stream(config.seed, &[tags::TRAIN_NOISE]);
    let mut log = LossLog::new(config.log_every);
    let mut order: Vec<usize> = (0..alphas.rows()).collect();
    let mut step = 0;
    let mut final_loss = f64::NAN;
    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for idx in order.chunks(config.batch) {
            step += 1;
            let beta = b_std.gather_rows(idx);
            let alpha = a_std.gather_rows(idx);
            let eps = Mat::from_vec(
                idx.len(),
                config.latent_dim,
                rng::normal_vec(&mut noise_rng, idx.len() * config.latent_dim),
            );
            let (loss, _, grad) = nets.loss_and_grad(&beta, &alpha, &eps, config.kl_weight);
            log.record(step, loss)?;
            final_loss = loss;
            adam.update(&mut nets, &grad);
        }
    }
    if !nets.all_finite() {
        return Err(Error::TrainingDiverged { step });
    }
    Ok(VaeTraining {
        model: VaeModel {
            config: config.clone(),
            nets,
            alpha_norm,
            beta_norm,
        },
        loss_history: log.finish(step),
        final_loss,
    })
}

/// Draws `z ∼ N(0, I)` and decodes at `α`; `count × q` samples in `β` units.
pub fn sample_null_vae(model: &VaeModel, alpha: &[f64], count: usize, seed: u64) -> Result<Mat> {
    let q = model.beta_norm.dim();
    check_len("alpha", model.alpha_norm.dim(), alpha.len())?;
    if count == 0 {
        return Ok(Mat::zeros(0, q));
    }
    let l = model.nets.latent_dim();
    let mut r = rng::stream(seed, &[tags::VAE_SAMPLE]);
    let z = Mat::from_vec(count, l, rng::normal_vec(&mut r, count * l));
    let a = model.alpha_norm.apply_vec(alpha);
    let cond = Mat::from_vec(count, a.len(), a.repeat(count));
    let mut out = model.nets.decoder.forward(&concat(&z, &cond));
    if model.config.sample_observation_noise {
        for i in 0..count {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                let e = rng::normal(&mut r);
                if !model.beta_norm.is_constant(j) {
                    *v += e;
                }
            }
        }
    }
    model.beta_norm.invert_in_place(&mut out);
    Ok(out)
}

/// Mean squared error per coordinate of the deterministic reconstruction
/// `dec(μ_z(β, α), α)`, in `β` units.
pub fn reconstruction_mse(model: &VaeModel, alphas: &Mat, betas: &Mat) -> Result<f64> {
    check_len("paired alpha/beta rows", alphas.rows(), betas.rows())?;
    let a = model.alpha_norm.apply(alphas);
    let b = model.beta_norm.apply(betas);
    let l = model.nets.latent_dim();
    let mu = model.nets.encode(&b, &a).columns(0, l);
    let mut out = model.nets.decoder.forward(&concat(&mu, &a));
    model.beta_norm.invert_in_place(&mut out);
    let sq: f64 = out
        .as_slice()
        .iter()
        .zip(betas.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok(sq / betas.as_slice().len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;

    fn small() -> VaeConfig {
        VaeConfig {
            epochs: 20,
            batch: 64,
            hidden: 32,
            latent_dim: 4,
            ..VaeConfig::default()
        }
    }

    fn normal_mat(seed: u64, rows: usize, cols: usize) -> Mat {
        Mat::from_vec(rows, cols, rng::normal_vec(&mut rng::stream(seed, &[0]), rows * cols))
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kl in [0.0, 1.0] {
            let mut nets = VaeNets::new(5, 3, &small());
            let beta = normal_mat(1, 6, 5);
            let alpha = normal_mat(2, 6, 3);
            let eps = normal_mat(3, 6, 4);
            let report = gradient_check(
                &mut nets,
                |n| n.loss_and_grad(&beta, &alpha, &eps, kl).0,
                |n| n.loss_and_grad(&beta, &alpha, &eps, kl).2,
                128,
                1e-4,
                4,
            );
            assert!(report.passed, "kl={kl}: {report:?}");
        }
    }

    #[test]
    fn standard_normal_data_sanity_band() {
        let q = 8;
        let n = 2000;
        let betas = normal_mat(5, n, q);
        let alphas = normal_mat(6, n, 2);
        let trained = train_null_vae(&alphas, &betas, &small()).unwrap();
        let s = sample_null_vae(&trained.model, &[0.3, -0.1], 4000, 7).unwrap();
        let mean = s.column_means();
        let mean_norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
        assert!(mean_norm <= 0.1 * (q as f64).sqrt(), "mean norm {mean_norm}");
        for v in s.column_variances() {
            assert!((0.7..=1.1).contains(&v), "variance {v}");
        }
    }

    #[test]
    fn constant_target_is_reproduced() {
        let q = 6;
        let n = 500;
        let c: Vec<f64> = (0..q).map(|i| 1.0 + 0.5 * i as f64).collect();
        let betas = Mat::from_vec(n, q, c.repeat(n));
        let alphas = normal_mat(8, n, 2);
        let trained = train_null_vae(&alphas, &betas, &small()).unwrap();
        let s = sample_null_vae(&trained.model, &[0.0, 1.0], 100, 1).unwrap();
        let c_norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bound = 0.05 * c_norm + 0.05 * (q as f64).sqrt();
        for i in 0..s.rows() {
            let d = s.row(i).iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(d <= bound, "sample {i} off by {d}");
        }
    }

    #[test]
    fn kl_free_autoencoder_reconstructs_better() {
        let q = 6;
        let n = 1000;
        let alphas = normal_mat(9, n, 2);
        let mut betas = normal_mat(10, n, q);
        for i in 0..n {
            let a0 = alphas.get(i, 0);
            betas.row_mut(i).iter_mut().for_each(|v| *v += a0);
        }
        let with_kl = train_null_vae(&alphas, &betas, &small()).unwrap();
        let without = train_null_vae(
            &alphas,
            &betas,
            &VaeConfig {
                kl_weight: 0.0,
                ..small()
            },
        )
        .unwrap();
        let m1 = reconstruction_mse(&with_kl.model, &alphas, &betas).unwrap();
        let m0 = reconstruction_mse(&without.model, &alphas, &betas).unwrap();
        assert!(m0 < m1, "kl-free {m0} vs kl {m1}");
    }

    #[test]
    fn sampling_contract() {
        let trained = train_null_vae(&normal_mat(1, 50, 2), &normal_mat(2, 50, 3), &VaeConfig {
            epochs: 1,
            ..small()
        })
        .unwrap();
        let m = &trained.model;
        assert_eq!(sample_null_vae(m, &[0.0, 0.0], 0, 0).unwrap().rows(), 0);
        assert_eq!(
            sample_null_vae(m, &[0.1, 0.2], 5, 3).unwrap(),
            sample_null_vae(m, &[0.1, 0.2], 5, 3).unwrap()
        );
        assert!(sample_null_vae(m, &[0.1], 5, 3).is_err());
    }
}
