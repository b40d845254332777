//! Two-stage posterior sampling: `α̂` from the range model, then `β̂ ∼ p(β | α̂)`.

use super::null::NullModel;
use super::range::RangeModel;
use super::tensor::{gemm, Mat};
use crate::error::{check_len, Result};
use crate::operator::RangeNullBasis;
use crate::rng::{self, tags};

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSamples {
    pub alpha_hat: Vec<f64>,
    /// `count × q` null coefficients.
    pub betas: Mat,
    /// `count × p` reconstructions `V_r·α̂ + V_n·β̂ⁱ`.
    pub reconstructions: Mat,
    /// Sample mean of the reconstructions.
    pub mean: Vec<f64>,
}

/// Row-major copies of `V_r` and `V_n` for batched reconstruction.
#[derive(Debug, Clone)]
pub struct BasisRows {
    v_r: Mat,
    v_n: Mat,
}

impl BasisRows {
    pub fn new(basis: &RangeNullBasis) -> Self {
        Self {
            v_r: super::null::dmatrix_to_mat(basis.v_r()),
            v_n: super::null::dmatrix_to_mat(basis.v_n()),
        }
    }

    pub fn p(&self) -> usize {
        self.v_r.rows()
    }

    /// Rows `V_r·α + V_n·βⁱ` for each row `βⁱ` of `betas`.
    pub fn reconstruct(&self, alpha: &[f64], betas: &Mat) -> Mat {
        let p = self.p();
        let mut out = Mat::zeros(betas.rows(), p);
        if self.v_n.cols() > 0 {
            gemm(1.0, betas, false, &self.v_n, true, 0.0, &mut out);
        }
        let range_part: Vec<f64> = (0..p)
            .map(|i| self.v_r.row(i).iter().zip(alpha).map(|(v, a)| v * a).sum())
            .collect();
        out.add_row_vector(&range_part);
        out
    }
}

pub fn check_cascade_dims(range: &RangeModel, null: &NullModel, basis: &RangeNullBasis) -> Result<()> {
    check_len("range model output", basis.rank(), range.output_dim())?;
    check_len("null model conditioning", basis.rank(), null.r())?;
    check_len("null model output", basis.null_dim(), null.q())
}

pub fn cascade_sample(
    range: &RangeModel,
    null: &NullModel,
    basis: &RangeNullBasis,
    y: &[f64],
    count: usize,
    seed: u64,
) -> Result<CascadeSamples> {
    check_cascade_dims(range, null, basis)?;
    let alpha_hat = range.predict(y)?;
    let betas = null.sample(&alpha_hat, count, rng::derive_seed(seed, &[tags::CASCADE]))?;
    let reconstructions = BasisRows::new(basis).reconstruct(&alpha_hat, &betas);
    let mean = if count > 0 {
        reconstructions.column_means()
    } else {
        vec![0.0; basis.p()]
    };
    Ok(CascadeSamples {
        alpha_hat,
        betas,
        reconstructions,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::gaussian::{build_problem, GaussianParams};
    use crate::nn::null::GaussianConditional;
    use crate::nn::range::{train_range, RangeConfig, RangeKind};
    use crate::operator::{decompose_operator, ForwardOperator, DEFAULT_RANK_TOLERANCE};
    use nalgebra::DMatrix;

    fn mask_problem() -> (ForwardOperator, RangeNullBasis, RangeModel) {
        let mut a = DMatrix::zeros(3, 6);
        for (i, j) in [(0, 0), (1, 2), (2, 5)] {
            a[(i, j)] = 1.0;
        }
        let op = ForwardOperator::new(a, 0.0).unwrap();
        let basis = decompose_operator(&op, DEFAULT_RANK_TOLERANCE).unwrap();
        let ys = Mat::from_vec(50, 3, rng::normal_vec(&mut rng::stream(1, &[0]), 150));
        let mut alphas = Mat::zeros(50, 3);
        for i in 0..50 {
            let y = ys.row(i).to_vec();
            let mut x = vec![0.0; 6];
            x[0] = y[0];
            x[2] = y[1];
            x[5] = y[2];
            let pair = basis.project(&x).unwrap();
            alphas.row_mut(i).copy_from_slice(&pair.alpha);
        }
        let cfg = RangeConfig {
            kind: RangeKind::Ridge,
            ..RangeConfig::default()
        };
        let range = train_range(&ys, &alphas, &cfg).unwrap().model;
        (op, basis, range)
    }

    #[test]
    fn degenerate_null_gives_identical_samples() {
        let (_, basis, range) = mask_problem();
        let m = Mat::from_vec(3, 3, vec![0.5, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0]);
        let null = NullModel::Oracle(GaussianConditional::point_mass(m.clone()));
        let out = cascade_sample(&range, &null, &basis, &[1.0, 2.0, 3.0], 5, 0).unwrap();
        let beta = GaussianConditional::point_mass(m).mean(&out.alpha_hat);
        let expect = basis.reconstruct_parts(&out.alpha_hat, &beta).unwrap();
        for i in 0..5 {
            for (a, b) in out.reconstructions.row(i).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn measurement_residual_is_shared_across_samples() {
        let (op, basis, range) = mask_problem();
        let spec = build_problem(GaussianParams {
            r: 3,
            q: 3,
            n: 3,
            ..GaussianParams::default()
        })
        .unwrap();
        let null = NullModel::Oracle(GaussianConditional::from_gaussian(&spec));
        let y = [0.3, -1.2, 0.8];
        let out = cascade_sample(&range, &null, &basis, &y, 20, 4).unwrap();
        let residual = |row: &[f64]| -> f64 {
            let ax = op.matrix() * nalgebra::DVector::from_column_slice(row);
            ax.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let r0 = residual(out.reconstructions.row(0));
        for i in 1..20 {
            assert!((residual(out.reconstructions.row(i)) - r0).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_mean_is_deterministic_and_dims_checked() {
        let (_, basis, range) = mask_problem();
        let spec = build_problem(GaussianParams {
            r: 3,
            q: 3,
            n: 3,
            ..GaussianParams::default()
        })
        .unwrap();
        let null = NullModel::Oracle(GaussianConditional::from_gaussian(&spec));
        let a = cascade_sample(&range, &null, &basis, &[0.1, 0.2, 0.3], 200, 9).unwrap();
        let b = cascade_sample(&range, &null, &basis, &[0.1, 0.2, 0.3], 200, 9).unwrap();
        assert_eq!(a.mean, b.mean);
        let wrong = NullModel::Oracle(GaussianConditional::point_mass(Mat::zeros(4, 3)));
        assert!(matches!(
            cascade_sample(&range, &wrong, &basis, &[0.1, 0.2, 0.3], 2, 0),
            Err(Error::Dimension { .. })
        ));
    }
}
