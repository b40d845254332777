//! Deterministic range model `α̂ = f_θ(y)`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::mlp::{Activation, Mlp, ParamSet};
use super::normalize::Standardizer;
use super::tensor::{gemm, Mat};
use super::train::{LossLog, LossPoint};
use crate::error::{check_len, Error, Result};
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RangeKind {
    #[default]
    Mlp,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeConfig {
    pub kind: RangeKind,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
    pub blocks: usize,
    /// Ridge penalty relative to the mean eigenvalue of the centered Gram matrix.
    pub ridge: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for RangeConfig {
    fn default() -> Self {
        Self {
            kind: RangeKind::Mlp,
            epochs: 30,
            batch: 256,
            lr: 1e-3,
            hidden: 256,
            blocks: 2,
            ridge: 1e-10,
            log_every: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RangeModel {
    Ridge {
        /// `n × r` map applied as `α̂ = y·W + b`.
        weights: Mat,
        intercept: Vec<f64>,
    },
    Mlp {
        net: Mlp,
        y_norm: Standardizer,
        alpha_norm: Standardizer,
    },
}

pub struct RangeTraining {
    pub model: RangeModel,
    pub loss_history: Vec<LossPoint>,
}

impl RangeModel {
    pub fn input_dim(&self) -> usize {
        match self {
            RangeModel::Ridge { weights, .. } => weights.rows(),
            RangeModel::Mlp { net, .. } => net.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            RangeModel::Ridge { intercept, .. } => intercept.len(),
            RangeModel::Mlp { net, .. } => net.output_dim(),
        }
    }

    pub fn predict_batch(&self, ys: &Mat) -> Result<Mat> {
        check_len("measurement", self.input_dim(), ys.cols())?;
        Ok(match self {
            RangeModel::Ridge { weights, intercept } => {
                let mut out = Mat::zeros(ys.rows(), intercept.len());
                gemm(1.0, ys, false, weights, false, 0.0, &mut out);
                out.add_row_vector(intercept);
                out
            }
            RangeModel::Mlp {
                net,
                y_norm,
                alpha_norm,
            } => {
                let mut out = net.forward(&y_norm.apply(ys));
                alpha_norm.invert_in_place(&mut out);
                for i in 0..out.rows() {
                    for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                        if alpha_norm.is_constant(j) {
                            *v = alpha_norm.mean[j];
                        }
                    }
                }
                out
            }
        })
    }

    pub fn predict(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .predict_batch(&Mat::from_vec(1, y.len(), y.to_vec()))?
            .into_vec())
    }
}

/// Fits `α* ≈ f(y)` by least squares: closed-form ridge with intercept, or an
/// MLP trained with Adam on standardized inputs and targets.
pub fn train_range(ys: &Mat, alphas: &Mat, config: &RangeConfig) -> Result<RangeTraining> {
    if ys.rows() == 0 {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    check_len("paired y/alpha rows", ys.rows(), alphas.rows())?;
    match config.kind {
        RangeKind::Ridge => train_ridge(ys, alphas, config.ridge),
        RangeKind::Mlp => train_mlp(ys, alphas, config),
    }
}

fn train_ridge(ys: &Mat, alphas: &Mat, ridge: f64) -> Result<RangeTraining> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge must be nonnegative, got {ridge}")));
    }
    let (rows, n, r) = (ys.rows(), ys.cols(), alphas.cols());
    let y_mean = ys.column_means();
    let a_mean = alphas.column_means();
    let yc = DMatrix::from_fn(rows, n, |i, j| ys.get(i, j) - y_mean[j]);
    let ac = DMatrix::from_fn(rows, r, |i, j| alphas.get(i, j) - a_mean[j]);
    let mut gram = yc.transpose() * &yc;
    let lambda = ridge * gram.trace() / n.max(1) as f64;
    for i in 0..n {
        gram[(i, i)] += lambda.max(f64::MIN_POSITIVE);
    }
    let rhs = yc.transpose() * &ac;
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::DegenerateInput(format!("ridge solve failed: {e}")))?,
    };
    let weights = Mat::from_vec(n, r, (0..n * r).map(|k| w[(k / r, k % r)]).collect());
    let intercept: Vec<f64> = (0..r)
        .map(|j| a_mean[j] - (0..n).map(|i| y_mean[i] * w[(i, j)]).sum::<f64>())
        .collect();
    let model = RangeModel::Ridge { weights, intercept };
    let pred = model.predict_batch(ys)?;
    let mse = pred
        .as_slice()
        .iter()
        .zip(alphas.as_slice())
        .map(|(p, a)| (p - a).powi(2))
        .sum::<f64>()
        / (rows * r.max(1)) as f64;
    if !mse.is_finite() {
        return Err(Error::TrainingDiverged { step: 1 });
    }
    Ok(RangeTraining {
        model,
        loss_history: vec![LossPoint { step: 1, loss: mse }],
    })
}

fn train_mlp(ys: &Mat, alphas: &Mat, config: &RangeConfig) -> Result<RangeTraining> {
    if config.epochs == 0 || config.batch == 0 || config.hidden == 0 || !(config.lr > 0.0) {
        return Err(Error::InvalidConfig(
            "range epochs, batch, hidden and lr must be positive".into(),
        ));
    }
    let y_norm = Standardizer::fit(ys);
    let alpha_norm = Standardizer::fit(alphas);
    let x = y_norm.apply(ys);
    let t = alpha_norm.apply(alphas);
    let mut widths = vec![ys.cols()];
    widths.extend(vec![config.hidden; config.blocks]);
    widths.push(alphas.cols());
    let mut net = Mlp::new(&widths, Activation::Silu, &mut rng::stream(config.seed, &[tags::NET_INIT]));
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &net);
    let mut order_rng = rng::stream(config.seed, &[tags::TRAIN_BATCH]);
    let mut order: Vec<usize> = (0..ys.rows()).collect();
    let mut log = LossLog::new(config.log_every);
    let mut step = 0;
    let r = alphas.cols().max(1) as f64;
    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for idx in order.chunks(config.batch) {
            step += 1;
            let (half_sq, grad) = net.squared_error_grad(&x.gather_rows(idx), &t.gather_rows(idx));
            log.record(step, 2.0 * half_sq / r)?;
            adam.update(&mut net, &grad);
        }
    }
    if !net.all_finite() {
        return Err(Error::TrainingDiverged { step });
    }
    Ok(RangeTraining {
        model: RangeModel::Mlp {
            net,
            y_norm,
            alpha_norm,
        },
        loss_history: log.finish(step),
    })
}
