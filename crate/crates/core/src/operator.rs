//! Linear forward operators and their range/null decomposition.
//!
//! A signal `x ∈ Rᵖ` splits as `x = V_r·α + V_n·β`, where the columns of
//! `V_r` span the right-singular subspace of `A` with nonzero singular
//! values and `V_n` spans `Null(A)`. Only `α` is visible to the measurement.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::rng::{self, tags};

pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;
pub const OPERATOR_FORMAT_VERSION: u32 = 1;

/// Dense forward operator `y = A·x + ε`, `ε ~ N(0, σ²I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOperator {
    matrix: DMatrix<f64>,
    noise_sigma: f64,
}

impl ForwardOperator {
    pub fn new(matrix: DMatrix<f64>, noise_sigma: f64) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidOperator(format!(
                "matrix must be non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator(format!(
                "non-finite entry at column-major index {pos}"
            )));
        }
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::InvalidOperator(format!(
                "noise_sigma must be finite and nonnegative, got {noise_sigma}"
            )));
        }
        Ok(Self {
            matrix,
            noise_sigma,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Number of measurements `n`.
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Signal dimension `p`.
    pub fn p(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn with_noise_sigma(&self, noise_sigma: f64) -> Result<Self> {
        Self::new(self.matrix.clone(), noise_sigma)
    }
}

/// Orthonormal bases of the identifiable (`V_r`) and null (`V_n`) subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeNullBasis {
    v_r: DMatrix<f64>,
    v_n: DMatrix<f64>,
    singular_values: Vec<f64>,
}

/// Coordinates `(α, β)` of a signal in a [`RangeNullBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPair {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl RangeNullBasis {
    /// Assembles a basis from explicit parts, checking shapes and orthonormality.
    pub fn from_parts(
        v_r: DMatrix<f64>,
        v_n: DMatrix<f64>,
        singular_values: Vec<f64>,
    ) -> Result<Self> {
        let p = v_r.nrows();
        check_len("V_n rows", p, v_n.nrows())?;
        check_len("V_r columns + V_n columns", p, v_r.ncols() + v_n.ncols())?;
        check_len("singular values", v_r.ncols(), singular_values.len())?;
        if singular_values.windows(2).any(|w| w[1] > w[0]) || singular_values.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidOperator(
                "singular values must be positive and nonincreasing".into(),
            ));
        }
        let basis = Self {
            v_r,
            v_n,
            singular_values,
        };
        let err = basis.orthonormality_error();
        if err > 1e-10 {
            return Err(Error::InvalidOperator(format!(
                "basis is not orthonormal (max entry error {err:e})"
            )));
        }
        Ok(basis)
    }

    pub fn v_r(&self) -> &DMatrix<f64> {
        &self.v_r
    }

    pub fn v_n(&self) -> &DMatrix<f64> {
        &self.v_n
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.v_r.ncols()
    }

    pub fn null_dim(&self) -> usize {
        self.v_n.ncols()
    }

    pub fn p(&self) -> usize {
        self.v_r.nrows()
    }

    /// Largest entrywise deviation of `[V_r V_n]ᵀ[V_r V_n]` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rank();
        let q = self.null_dim();
        let rr = self.v_r.transpose() * &self.v_r - DMatrix::identity(r, r);
        let nn = self.v_n.transpose() * &self.v_n - DMatrix::identity(q, q);
        let rn = self.v_r.transpose() * &self.v_n;
        linalg::max_abs(&rr)
            .max(linalg::max_abs(&nn))
            .max(linalg::max_abs(&rn))
    }

    pub fn project(&self, x: &[f64]) -> Result<CoefficientPair> {
        check_len("signal", self.p(), x.len())?;
        let x = DVector::from_column_slice(x);
        Ok(CoefficientPair {
            alpha: (self.v_r.tr_mul(&x)).as_slice().to_vec(),
            beta: (self.v_n.tr_mul(&x)).as_slice().to_vec(),
        })
    }

    pub fn reconstruct(&self, pair: &CoefficientPair) -> Result<Vec<f64>> {
        self.reconstruct_parts(&pair.alpha, &pair.beta)
    }

    pub fn reconstruct_parts(&self, alpha: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
        check_len("alpha", self.rank(), alpha.len())?;
        check_len("beta", self.null_dim(), beta.len())?;
        let mut x = &self.v_r * DVector::from_column_slice(alpha);
        x.gemv(1.0, &self.v_n, &DVector::from_column_slice(beta), 1.0);
        Ok(x.as_slice().to_vec())
    }

    /// `V_n·β` only.
    pub fn null_component(&self, beta: &[f64]) -> Result<Vec<f64>> {
        check_len("beta", self.null_dim(), beta.len())?;
        Ok((&self.v_n * DVector::from_column_slice(beta)).as_slice().to_vec())
    }
}

/// Computes the range/null split of `op` from its singular value decomposition.
///
/// Singular values with `σ_i > rank_tolerance·σ_max` define the rank. `V_r` holds
/// the matching right-singular vectors; `V_n` holds the remaining thin singular
/// vectors followed by a Householder completion of the full right-singular frame.
/// Each column is sign-normalized so its largest-magnitude entry is positive.
pub fn decompose_operator(op: &ForwardOperator, rank_tolerance: f64) -> Result<RangeNullBasis> {
    if !(rank_tolerance > 0.0 && rank_tolerance < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "rank_tolerance must lie in (0, 1), got {rank_tolerance}"
        )));
    }
    let a = op.matrix();
    let p = op.p();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidOperator("non-finite entries".into()));
    }
    if linalg::max_abs(a) == 0.0 {
        return Ok(RangeNullBasis {
            v_r: DMatrix::zeros(p, 0),
            v_n: DMatrix::identity(p, p),
            singular_values: Vec::new(),
        });
    }

    let svd = a.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::InvalidOperator("SVD did not return right singular vectors".into()))?;
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));

    let sigma_max = sv[order[0]];
    let rank = order
        .iter()
        .filter(|&&i| sv[i] > rank_tolerance * sigma_max)
        .count();

    let thin = DMatrix::from_fn(p, order.len(), |i, j| v_t[(order[j], i)]);
    let mut v_r = thin.columns(0, rank).into_owned();
    let complement = linalg::orthogonal_complement(&thin);
    let trailing = order.len() - rank;
    let mut v_n = DMatrix::zeros(p, trailing + complement.ncols());
    v_n.columns_mut(0, trailing)
        .copy_from(&thin.columns(rank, trailing));
    v_n.columns_mut(trailing, complement.ncols())
        .copy_from(&complement);

    linalg::flush_roundoff(&mut v_r);
    linalg::flush_roundoff(&mut v_n);
    linalg::fix_column_signs(&mut v_r);
    linalg::fix_column_signs(&mut v_n);

    Ok(RangeNullBasis {
        v_r,
        v_n,
        singular_values: order[..rank].iter().map(|&i| sv[i]).collect(),
    })
}

/// Applies `A·x`, adding `N(0, σ²I)` noise drawn from `noise_seed` when given.
pub fn apply_forward(op: &ForwardOperator, x: &[f64], noise_seed: Option<u64>) -> Result<Vec<f64>> {
    check_len("signal", op.p(), x.len())?;
    let mut y = (op.matrix() * DVector::from_column_slice(x)).as_slice().to_vec();
    if let Some(seed) = noise_seed {
        let mut rng = rng::stream(seed, &[tags::OPERATOR_NOISE]);
        for v in y.iter_mut() {
            *v += op.noise_sigma() * rng::normal(&mut rng);
        }
    }
    Ok(y)
}

/// Versioned JSON form of an operator together with its decomposition.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OperatorDocument {
    pub format_version: u32,
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub noise_sigma: f64,
    pub matrix: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub v_r: Vec<Vec<f64>>,
    pub v_n: Vec<Vec<f64>>,
}

impl OperatorDocument {
    pub fn new(op: &ForwardOperator, basis: &RangeNullBasis) -> Self {
        Self {
            format_version: OPERATOR_FORMAT_VERSION,
            n: op.n(),
            p: op.p(),
            r: basis.rank(),
            noise_sigma: op.noise_sigma(),
            matrix: linalg::to_row_major(op.matrix()),
            singular_values: basis.singular_values().to_vec(),
            v_r: linalg::to_row_major(basis.v_r()),
            v_n: linalg::to_row_major(basis.v_n()),
        }
    }

    pub fn into_parts(self) -> Result<(ForwardOperator, RangeNullBasis)> {
        if self.format_version != OPERATOR_FORMAT_VERSION {
            return Err(Error::Compatibility(format!(
                "unsupported operator format_version {}",
                self.format_version
            )));
        }
        let bad = |what: &str| Error::InvalidOperator(format!("malformed {what} array"));
        let matrix = linalg::from_row_major(&self.matrix, self.p).ok_or_else(|| bad("matrix"))?;
        check_len("matrix rows", self.n, matrix.nrows())?;
        let v_r = linalg::from_row_major(&self.v_r, self.r).ok_or_else(|| bad("v_r"))?;
        let v_n = linalg::from_row_major(&self.v_n, self.p - self.r).ok_or_else(|| bad("v_n"))?;
        let op = ForwardOperator::new(matrix, self.noise_sigma)?;
        let basis = RangeNullBasis::from_parts(v_r, v_n, self.singular_values)?;
        check_len("basis dimension", self.p, basis.p())?;
        Ok((op, basis))
    }
}
