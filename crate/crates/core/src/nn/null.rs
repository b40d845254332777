//! The null-model conditional `p(β | α)` behind one sampling interface.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ddpm::{sample_null_ddpm, DdpmConfig, DdpmModel};
use super::denoiser::Denoiser;
use super::mlp::{Activation, Linear, Mlp};
use super::normalize::Standardizer;
use super::schedule::DiffusionSchedule;
use super::tensor::{gemm, Mat};
use super::vae::{sample_null_vae, VaeConfig, VaeModel, VaeNets};
use crate::error::{check_len, Error, Result};
use crate::gaussian::GaussianProblemSpec;
use crate::rng::{self, tags};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Linear-Gaussian conditional `β | α ∼ N(offset + M·α, L·Lᵀ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianConditional {
    /// `q × r`.
    pub mean_map: Mat,
    pub offset: Vec<f64>,
    /// Lower-triangular `q × q` factor of the conditional covariance.
    pub chol: Mat,
}

impl GaussianConditional {
    pub fn new(mean_map: Mat, offset: Vec<f64>, chol: Mat) -> Result<Self> {
        let q = mean_map.rows();
        check_len("conditional offset", q, offset.len())?;
        if chol.rows() != q || chol.cols() != q {
            return Err(Error::Dimension {
                what: "conditional covariance factor",
                expected: q,
                got: chol.rows().max(chol.cols()),
            });
        }
        Ok(Self {
            mean_map,
            offset,
            chol,
        })
    }

    /// The exact `p(β | α)` of the Gaussian reference problem.
    pub fn from_gaussian(spec: &GaussianProblemSpec) -> Self {
        Self {
            mean_map: dmatrix_to_mat(spec.c()),
            offset: vec![0.0; spec.q()],
            chol: dmatrix_to_mat(spec.cholesky_l()),
        }
    }

    /// Degenerate conditional `β = M·α`.
    pub fn point_mass(mean_map: Mat) -> Self {
        let q = mean_map.rows();
        Self {
            mean_map,
            offset: vec![0.0; q],
            chol: Mat::zeros(q, q),
        }
    }

    pub fn r(&self) -> usize {
        self.mean_map.cols()
    }

    pub fn q(&self) -> usize {
        self.mean_map.rows()
    }

    pub fn mean(&self, alpha: &[f64]) -> Vec<f64> {
        (0..self.q())
            .map(|i| {
                self.offset[i]
                    + self
                        .mean_map
                        .row(i)
                        .iter()
                        .zip(alpha)
                        .map(|(m, a)| m * a)
                        .sum::<f64>()
            })
            .collect()
    }

    fn sample_scaled(&self, alpha: &[f64], count: usize, seed: u64, cov_scale: f64) -> Mat {
        let q = self.q();
        let mut r = rng::stream(seed, &[tags::ORACLE_SAMPLE]);
        let z = Mat::from_vec(count, q, rng::normal_vec(&mut r, count * q));
        let mut out = Mat::zeros(count, q);
        gemm(cov_scale.sqrt(), &z, false, &self.chol, true, 0.0, &mut out);
        out.add_row_vector(&self.mean(alpha));
        out
    }
}

pub fn dmatrix_to_mat(m: &DMatrix<f64>) -> Mat {
    Mat::from_vec(
        m.nrows(),
        m.ncols(),
        (0..m.nrows() * m.ncols())
            .map(|k| m[(k / m.ncols(), k % m.ncols())])
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum NullModel {
    Ddpm(DdpmModel),
    Vae(VaeModel),
    Oracle(GaussianConditional),
    /// The oracle with its covariance multiplied by `cov_scale`.
    ScaledOracle {
        conditional: GaussianConditional,
        cov_scale: f64,
    },
}

impl NullModel {
    pub fn scaled_oracle(conditional: GaussianConditional, cov_scale: f64) -> Result<Self> {
        if !(cov_scale >= 0.0 && cov_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "covariance scale must be nonnegative, got {cov_scale}"
            )));
        }
        Ok(NullModel::ScaledOracle {
            conditional,
            cov_scale,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NullModel::Ddpm(_) => "ddpm",
            NullModel::Vae(_) => "vae",
            NullModel::Oracle(_) => "oracle",
            NullModel::ScaledOracle { .. } => "scaled-oracle",
        }
    }

    pub fn r(&self) -> usize {
        match self {
            NullModel::Ddpm(m) => m.alpha_norm.dim(),
            NullModel::Vae(m) => m.alpha_norm.dim(),
            NullModel::Oracle(c) | NullModel::ScaledOracle { conditional: c, .. } => c.r(),
        }
    }

    pub fn q(&self) -> usize {
        match self {
            NullModel::Ddpm(m) => m.beta_norm.dim(),
            NullModel::Vae(m) => m.beta_norm.dim(),
            NullModel::Oracle(c) | NullModel::ScaledOracle { conditional: c, .. } => c.q(),
        }
    }

    /// `count × q` draws from the conditional at `alpha`; deterministic in `seed`.
    pub fn sample(&self, alpha: &[f64], count: usize, seed: u64) -> Result<Mat> {
        check_len("alpha", self.r(), alpha.len())?;
        match self {
            NullModel::Ddpm(m) => sample_null_ddpm(m, alpha, count, seed),
            NullModel::Vae(m) => sample_null_vae(m, alpha, count, seed),
            NullModel::Oracle(c) => Ok(c.sample_scaled(alpha, count, seed, 1.0)),
            NullModel::ScaledOracle {
                conditional,
                cov_scale,
            } => Ok(conditional.sample_scaled(alpha, count, seed, *cov_scale)),
        }
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let doc = match self {
            NullModel::Ddpm(m) => serde_json::to_value(DdpmCheckpoint {
                format_version: CHECKPOINT_FORMAT_VERSION,
                kind: "ddpm".into(),
                config: m.config.clone(),
                schedule: m.schedule.clone(),
                cond_dim: m.denoiser.cond_dim,
                layers: m.denoiser.trunk.layers.clone(),
                film: m.denoiser.film.clone(),
                skip: m.denoiser.skip.clone(),
                alpha_norm: m.alpha_norm.clone(),
                beta_norm: m.beta_norm.clone(),
            })?,
            NullModel::Vae(m) => serde_json::to_value(VaeCheckpoint {
                format_version: CHECKPOINT_FORMAT_VERSION,
                kind: "vae".into(),
                config: m.config.clone(),
                encoder_layers: m.nets.encoder.layers.clone(),
                decoder_layers: m.nets.decoder.layers.clone(),
                alpha_norm: m.alpha_norm.clone(),
                beta_norm: m.beta_norm.clone(),
            })?,
            NullModel::Oracle(c) => serde_json::to_value(OracleCheckpoint::new("oracle", c, 1.0))?,
            NullModel::ScaledOracle {
                conditional,
                cov_scale,
            } => serde_json::to_value(OracleCheckpoint::new("scaled-oracle", conditional, *cov_scale))?,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_FORMAT_VERSION as u64) {
            return Err(Error::Compatibility(format!(
                "checkpoint format_version {version:?}, expected {CHECKPOINT_FORMAT_VERSION}"
            )));
        }
        let kind = value.get("kind").and_then(|v| v.as_str()).unwrap_or("").to_string();
        match kind.as_str() {
            "ddpm" => {
                let c: DdpmCheckpoint = serde_json::from_value(value)?;
                c.schedule.validate()?;
                let denoiser = Denoiser {
                    conditioning: c.config.conditioning,
                    beta_dim: c.beta_norm.dim(),
                    cond_dim: c.cond_dim,
                    time_dim: c.config.time_dim,
                    t_steps: c.schedule.steps(),
                    trunk: Mlp {
                        activation: Activation::Silu,
                        layers: c.layers,
                    },
                    film: c.film,
                    skip: c.skip,
                };
                Ok(NullModel::Ddpm(DdpmModel {
                    config: c.config,
                    schedule: c.schedule,
                    denoiser,
                    alpha_norm: c.alpha_norm,
                    beta_norm: c.beta_norm,
                }))
            }
            "vae" => {
                let c: VaeCheckpoint = serde_json::from_value(value)?;
                Ok(NullModel::Vae(VaeModel {
                    config: c.config,
                    nets: VaeNets {
                        encoder: Mlp {
                            activation: Activation::Silu,
                            layers: c.encoder_layers,
                        },
                        decoder: Mlp {
                            activation: Activation::Silu,
                            layers: c.decoder_layers,
                        },
                    },
                    alpha_norm: c.alpha_norm,
                    beta_norm: c.beta_norm,
                }))
            }
            "oracle" | "scaled-oracle" => {
                let c: OracleCheckpoint = serde_json::from_value(value)?;
                let conditional = GaussianConditional::new(c.mean_map, c.offset, c.chol)?;
                if kind == "oracle" {
                    Ok(NullModel::Oracle(conditional))
                } else {
                    NullModel::scaled_oracle(conditional, c.cov_scale)
                }
            }
            other => Err(Error::Compatibility(format!("unknown null model kind {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DdpmCheckpoint {
    format_version: u32,
    kind: String,
    config: DdpmConfig,
    schedule: DiffusionSchedule,
    cond_dim: usize,
    layers: Vec<Linear>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    film: Option<Linear>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skip: Option<Linear>,
    alpha_norm: Standardizer,
    beta_norm: Standardizer,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VaeCheckpoint {
    format_version: u32,
    kind: String,
    config: VaeConfig,
    encoder_layers: Vec<Linear>,
    decoder_layers: Vec<Linear>,
    alpha_norm: Standardizer,
    beta_norm: Standardizer,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleCheckpoint {
    format_version: u32,
    kind: String,
    mean_map: Mat,
    offset: Vec<f64>,
    chol: Mat,
    cov_scale: f64,
}

impl OracleCheckpoint {
    fn new(kind: &str, c: &GaussianConditional, cov_scale: f64) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: kind.into(),
            mean_map: c.mean_map.clone(),
            offset: c.offset.clone(),
            chol: c.chol.clone(),
            cov_scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{build_problem, GaussianParams};
    use crate::nn::ddpm::init_null_ddpm;
    use crate::nn::denoiser::Conditioning;
    use crate::nn::vae::train_null_vae;

    fn small_gaussian() -> GaussianProblemSpec {
        build_problem(GaussianParams {
            r: 3,
            q: 5,
            n: 3,
            ..GaussianParams::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_moments_and_scaling() {
        let spec = small_gaussian();
        let oracle = GaussianConditional::from_gaussian(&spec);
        let alpha = [0.5, -1.0, 2.0];
        let mean = oracle.mean(&alpha);
        for (scale, tol) in [(1.0, 0.03), (0.25, 0.03), (4.0, 0.03)] {
            let model = NullModel::scaled_oracle(oracle.clone(), scale).unwrap();
            let s = model.sample(&alpha, 100_000, 3).unwrap();
            let m = s.column_means();
            let v = s.column_variances();
            for j in 0..5 {
                let expect = scale * spec.sigma_eta()[(j, j)];
                assert!((m[j] - mean[j]).abs() < 0.02 * (1.0 + expect.sqrt()) * 3.0);
                assert!((v[j] / expect - 1.0).abs() < tol, "scale {scale} dim {j}");
            }
        }
    }

    #[test]
    fn point_mass_returns_the_mean() {
        let m = Mat::from_rows(&[[1.0, 0.0], [2.0, -1.0], [0.0, 3.0]], 2);
        let model = NullModel::Oracle(GaussianConditional::point_mass(m));
        let s = model.sample(&[1.0, 2.0], 4, 0).unwrap();
        for i in 0..4 {
            assert_eq!(s.row(i), &[1.0, 0.0, 6.0]);
        }
    }

    #[test]
    fn checkpoints_roundtrip_exactly() {
        let spec = small_gaussian();
        let oracle = GaussianConditional::from_gaussian(&spec);
        let mut models = vec![
            NullModel::Oracle(oracle.clone()),
            NullModel::scaled_oracle(oracle, 0.25).unwrap(),
        ];
        for conditioning in [Conditioning::Concat, Conditioning::Film] {
            let cfg = DdpmConfig {
                hidden: 8,
                t_steps: 20,
                time_dim: 4,
                conditioning,
                ..DdpmConfig::default()
            };
            models.push(NullModel::Ddpm(init_null_ddpm(3, 5, &cfg).unwrap()));
        }
        let data = Mat::from_vec(20, 5, rng::normal_vec(&mut rng::stream(1, &[0]), 100));
        let cond = Mat::from_vec(20, 3, rng::normal_vec(&mut rng::stream(2, &[0]), 60));
        let vae_cfg = VaeConfig {
            epochs: 1,
            hidden: 8,
            latent_dim: 2,
            ..VaeConfig::default()
        };
        models.push(NullModel::Vae(train_null_vae(&cond, &data, &vae_cfg).unwrap().model));
        for model in models {
            let text = model.to_checkpoint_json().unwrap();
            let back = NullModel::from_checkpoint_json(&text).unwrap();
            assert_eq!(back, model, "{}", model.kind());
            assert_eq!(
                back.sample(&[0.1, 0.2, 0.3], 3, 5).unwrap(),
                model.sample(&[0.1, 0.2, 0.3], 3, 5).unwrap()
            );
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["kind"], model.kind());
        }
    }

    #[test]
    fn checkpoint_version_and_kind_are_checked() {
        let model = NullModel::Oracle(GaussianConditional::point_mass(Mat::zeros(2, 1)));
        let text = model.to_checkpoint_json().unwrap();
        let bumped = text.replace("\"format_version\":1", "\"format_version\":2");
        assert!(matches!(
            NullModel::from_checkpoint_json(&bumped),
            Err(Error::Compatibility(_))
        ));
        let unknown = text.replace("\"kind\":\"oracle\"", "\"kind\":\"flow\"");
        assert!(matches!(
            NullModel::from_checkpoint_json(&unknown),
            Err(Error::Compatibility(_))
        ));
    }
}
