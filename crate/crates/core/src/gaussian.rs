//! Linear-Gaussian analytical problem with closed-form posteriors.
//!
//! ```text
//! α ~ N(0, I_r)
//! β | α ~ N(Cα, Σ_η)
//! y | α ~ N(Aα, σ_y² I_n)
//! ```
//!
//! `y` depends on `α` only, so `β ⊥ y | α` holds exactly and every
//! conditional used by the calibration machinery is available in closed form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::operator::RangeNullBasis;
use crate::rng::{self, tags, StreamRng};

pub const GAUSSIAN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianParams {
    pub r: usize,
    pub q: usize,
    pub n: usize,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub sigma_y: f64,
    pub seed: u64,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            r: 32,
            q: 64,
            n: 32,
            lambda_max: 8.0,
            lambda_min: 0.1,
            sigma_y: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianProblemSpec {
    params: GaussianParams,
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    sigma_eta: DMatrix<f64>,
    cholesky_l: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

/// Mean and covariance of a Gaussian posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// One draw `(α, β, y)` from the joint model.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub y: Vec<f64>,
}

/// `λ_i = λ_max·(λ_min/λ_max)^{(i−1)/(q−1)}`, inclusive of both endpoints.
pub fn geometric_ladder(q: usize, lambda_max: f64, lambda_min: f64) -> Vec<f64> {
    if q == 1 {
        return vec![lambda_max];
    }
    let ratio = lambda_min / lambda_max;
    (0..q)
        .map(|i| lambda_max * ratio.powf(i as f64 / (q - 1) as f64))
        .collect()
}

/// Constructs the problem: `A` from a QR of a Gaussian draw, `C_ij ~ N(0, 1/r)`,
/// `Σ_η = QΛQᵀ` with Haar `Q` and a geometric eigenvalue ladder.
pub fn build_problem(params: GaussianParams) -> Result<GaussianProblemSpec> {
    let GaussianParams {
        r,
        q,
        n,
        lambda_max,
        lambda_min,
        sigma_y,
        seed,
    } = params;
    if r == 0 || q == 0 || n == 0 {
        return Err(Error::InvalidConfig("r, q and n must all be at least 1".into()));
    }
    if n < r {
        return Err(Error::InvalidConfig(format!(
            "n = {n} < r = {r}: QR cannot produce orthonormal columns"
        )));
    }
    if !(lambda_min > 0.0 && lambda_max >= lambda_min && lambda_max.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "need lambda_max >= lambda_min > 0, got {lambda_max}, {lambda_min}"
        )));
    }
    if !(sigma_y > 0.0 && sigma_y.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma_y must be positive, got {sigma_y}")));
    }

    let a = linalg::orthonormal_columns(linalg::gaussian_matrix(
        &mut rng::stream(seed, &[tags::GAUSS_A]),
        n,
        r,
        1.0,
    ));
    let c = linalg::gaussian_matrix(
        &mut rng::stream(seed, &[tags::GAUSS_C]),
        q,
        r,
        1.0 / (r as f64).sqrt(),
    );
    let rot = linalg::random_orthogonal(&mut rng::stream(seed, &[tags::GAUSS_Q]), q);
    let eigenvalues = geometric_ladder(q, lambda_max, lambda_min);
    let lambda = DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()));
    let sigma_eta = linalg::symmetrize(&(&rot * lambda * rot.transpose()));
    let cholesky_l = Cholesky::new(sigma_eta.clone())
        .expect("Σ_η = QΛQᵀ with positive Λ must be positive definite")
        .l();

    Ok(GaussianProblemSpec {
        params,
        a,
        c,
        sigma_eta,
        cholesky_l,
        eigenvalues,
    })
}

impl GaussianProblemSpec {
    pub fn params(&self) -> &GaussianParams {
        &self.params
    }
    pub fn r(&self) -> usize {
        self.params.r
    }
    pub fn q(&self) -> usize {
        self.params.q
    }
    pub fn n(&self) -> usize {
        self.params.n
    }
    pub fn sigma_y(&self) -> f64 {
        self.params.sigma_y
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn sigma_eta(&self) -> &DMatrix<f64> {
        &self.sigma_eta
    }
    pub fn cholesky_l(&self) -> &DMatrix<f64> {
        &self.cholesky_l
    }
    /// The configured eigenvalue ladder of `Σ_η`, largest first.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Same problem with a different measurement-noise level.
    pub fn with_sigma_y(&self, sigma_y: f64) -> Result<Self> {
        if !(sigma_y > 0.0 && sigma_y.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_y must be positive, got {sigma_y}")));
        }
        let mut out = self.clone();
        out.params.sigma_y = sigma_y;
        Ok(out)
    }

    /// Embeds `(α, β)` as `x = (α, β) ∈ R^{r+q}`: `V_r = [I; 0]`, `V_n = [0; I]`.
    pub fn canonical_basis(&self) -> RangeNullBasis {
        let (r, q) = (self.r(), self.q());
        let v_r = DMatrix::from_fn(r + q, r, |i, j| if i == j { 1.0 } else { 0.0 });
        let v_n = DMatrix::from_fn(r + q, q, |i, j| if i == r + j { 1.0 } else { 0.0 });
        RangeNullBasis::from_parts(v_r, v_n, vec![1.0; r]).expect("canonical basis is orthonormal")
    }

    /// The full forward operator `[A, 0]` acting on `x = (α, β)`.
    pub fn embedded_operator(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n(), self.r() + self.q());
        m.columns_mut(0, self.r()).copy_from(&self.a);
        m
    }

    /// `β = Cα + L·z` for one conditioning vector.
    pub fn draw_beta(&self, alpha: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let z = DVector::from_vec(rng::normal_vec(rng, self.q()));
        let mut beta = &self.c * DVector::from_column_slice(alpha);
        beta.gemv(1.0, &self.cholesky_l, &z, 1.0);
        beta.as_slice().to_vec()
    }

    fn draw_joint(&self, rng: &mut StreamRng) -> JointSample {
        let alpha = rng::normal_vec(rng, self.r());
        let beta = self.draw_beta(&alpha, rng);
        let w = DVector::from_vec(rng::normal_vec(rng, self.n()));
        let mut y = &self.a * DVector::from_column_slice(&alpha);
        y.axpy(self.sigma_y(), &w, 1.0);
        JointSample {
            alpha,
            beta,
            y: y.as_slice().to_vec(),
        }
    }
}

/// Draws `count` i.i.d. joint samples; sample `i` uses its own substream.
pub fn sample_joint(spec: &GaussianProblemSpec, count: usize, seed: u64) -> Vec<JointSample> {
    (0..count)
        .map(|i| spec.draw_joint(&mut rng::stream(seed, &[tags::GAUSS_JOINT, i as u64])))
        .collect()
}

/// `Σ_{α|y} = (I + σ⁻²AᵀA)⁻¹`, `μ_{α|y} = σ⁻²Σ_{α|y}Aᵀy`.
pub fn posterior_alpha(spec: &GaussianProblemSpec, y: &[f64]) -> Result<GaussianPosterior> {
    check_len("measurement", spec.n(), y.len())?;
    let covariance = posterior_alpha_covariance(spec);
    let prec = spec.sigma_y().powi(-2);
    let mean = &covariance * (spec.a.tr_mul(&DVector::from_column_slice(y)) * prec);
    Ok(GaussianPosterior { mean, covariance })
}

/// The α-posterior covariance, which does not depend on `y`.
pub fn posterior_alpha_covariance(spec: &GaussianProblemSpec) -> DMatrix<f64> {
    let r = spec.r();
    let prec = spec.sigma_y().powi(-2);
    let precision = DMatrix::identity(r, r) + spec.a.tr_mul(&spec.a) * prec;
    let inv = Cholesky::<f64, Dyn>::new(precision)
        .expect("I + σ⁻²AᵀA is positive definite")
        .inverse();
    linalg::symmetrize(&inv)
}

/// `β | α* ~ N(Cα*, Σ_η)`.
pub fn oracle_beta_given_alpha(
    spec: &GaussianProblemSpec,
    alpha_star: &[f64],
) -> Result<GaussianPosterior> {
    check_len("alpha", spec.r(), alpha_star.len())?;
    Ok(GaussianPosterior {
        mean: &spec.c * DVector::from_column_slice(alpha_star),
        covariance: spec.sigma_eta.clone(),
    })
}

/// `β | y ~ N(Cμ_{α|y}, CΣ_{α|y}Cᵀ + Σ_η)`: intrinsic ambiguity plus the
/// uncertainty propagated from `α`.
pub fn marginal_beta_given_y(spec: &GaussianProblemSpec, y: &[f64]) -> Result<GaussianPosterior> {
    let post = posterior_alpha(spec, y)?;
    let propagated = propagated_covariance(spec, &post.covariance);
    Ok(GaussianPosterior {
        mean: &spec.c * &post.mean,
        covariance: linalg::symmetrize(&(propagated + &spec.sigma_eta)),
    })
}

/// `C·Σ_{α|y}·Cᵀ`.
pub fn propagated_covariance(spec: &GaussianProblemSpec, alpha_cov: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(&spec.c * alpha_cov * spec.c.transpose()))
}

/// Versioned JSON form of a problem.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpecDocument {
    pub format_version: u32,
    pub params: GaussianParams,
    pub a: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub sigma_eta: Vec<Vec<f64>>,
    pub cholesky_l: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl GaussianSpecDocument {
    pub fn new(spec: &GaussianProblemSpec) -> Self {
        Self {
            format_version: GAUSSIAN_FORMAT_VERSION,
            params: spec.params,
            a: linalg::to_row_major(&spec.a),
            c: linalg::to_row_major(&spec.c),
            sigma_eta: linalg::to_row_major(&spec.sigma_eta),
            cholesky_l: linalg::to_row_major(&spec.cholesky_l),
            eigenvalues: spec.eigenvalues.clone(),
        }
    }

    pub fn into_spec(self) -> Result<GaussianProblemSpec> {
        if self.format_version != GAUSSIAN_FORMAT_VERSION {
            return Err(Error::Compatibility(format!(
                "unsupported gaussian format_version {}",
                self.format_version
            )));
        }
        let p = self.params;
        let bad = |what: &str| Error::InvalidConfig(format!("malformed {what} array"));
        let a = linalg::from_row_major(&self.a, p.r).ok_or_else(|| bad("a"))?;
        let c = linalg::from_row_major(&self.c, p.r).ok_or_else(|| bad("c"))?;
        let sigma_eta = linalg::from_row_major(&self.sigma_eta, p.q).ok_or_else(|| bad("sigma_eta"))?;
        let cholesky_l = linalg::from_row_major(&self.cholesky_l, p.q).ok_or_else(|| bad("cholesky_l"))?;
        check_len("a rows", p.n, a.nrows())?;
        check_len("c rows", p.q, c.nrows())?;
        check_len("sigma_eta rows", p.q, sigma_eta.nrows())?;
        check_len("cholesky_l rows", p.q, cholesky_l.nrows())?;
        check_len("eigenvalues", p.q, self.eigenvalues.len())?;
        Ok(GaussianProblemSpec {
            params: p,
            a,
            c,
            sigma_eta,
            cholesky_l,
            eigenvalues: self.eigenvalues,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_problem(seed: u64) -> GaussianProblemSpec {
        build_problem(GaussianParams {
            seed,
            ..GaussianParams::default()
        })
        .unwrap()
    }

    fn small_problem(seed: u64) -> GaussianProblemSpec {
        build_problem(GaussianParams {
            r: 4,
            q: 6,
            n: 5,
            lambda_max: 3.0,
            lambda_min: 0.2,
            sigma_y: 0.5,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn construction_invariants() {
        let spec = paper_problem(1);
        let ata = spec.a().tr_mul(spec.a());
        assert!(linalg::max_abs(&(ata - DMatrix::identity(32, 32))) < 1e-10);
        assert!(linalg::max_asymmetry(spec.sigma_eta()) < 1e-12);
        let eig = spec.sigma_eta().clone().symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        assert!(lo > 0.0);
        assert!(((hi / lo) / 80.0 - 1.0).abs() < 0.01, "condition {}", hi / lo);
        let llt = spec.cholesky_l() * spec.cholesky_l().transpose();
        assert!(linalg::frobenius_relative(&llt, spec.sigma_eta()) < 1e-12);
    }

    #[test]
    fn trace_equals_ladder_sum() {
        for seed in [0, 5, 9] {
            let spec = paper_problem(seed);
            let ladder: f64 = geometric_ladder(64, 8.0, 0.1).iter().sum();
            assert!((spec.sigma_eta().trace() - ladder).abs() < 1e-10 * ladder);
        }
    }

    #[test]
    fn ladder_endpoints() {
        let l = geometric_ladder(5, 8.0, 0.5);
        assert_eq!(l[0], 8.0);
        assert!((l[4] - 0.5).abs() < 1e-15);
        assert!((l[1] / l[0] - l[2] / l[1]).abs() < 1e-14);
    }

    #[test]
    fn invalid_configs() {
        let bad = |p: GaussianParams| matches!(build_problem(p), Err(Error::InvalidConfig(_)));
        let d = GaussianParams::default();
        assert!(bad(GaussianParams { n: 16, ..d }));
        assert!(bad(GaussianParams { r: 0, ..d }));
        assert!(bad(GaussianParams { lambda_min: 0.0, ..d }));
        assert!(bad(GaussianParams { lambda_min: 9.0, ..d }));
        assert!(bad(GaussianParams { sigma_y: 0.0, ..d }));
    }

    #[test]
    fn c_alpha_energy_matches_q() {
        // E‖Cα‖² = trace(CᵀC) ≈ q for α ~ N(0, I_r).
        let spec = paper_problem(2);
        let mut rng = rng::stream(2, &[1000]);
        let draws = 10_000;
        let mut total = 0.0;
        for _ in 0..draws {
            let alpha = DVector::from_vec(rng::normal_vec(&mut rng, 32));
            total += (spec.c() * alpha).norm_squared();
        }
        let mean = total / draws as f64;
        assert!((mean / 64.0 - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn joint_sampling_is_deterministic() {
        let spec = small_problem(3);
        assert_eq!(sample_joint(&spec, 5, 11), sample_joint(&spec, 5, 11));
        assert_ne!(sample_joint(&spec, 5, 11), sample_joint(&spec, 5, 12));
    }

    #[test]
    fn joint_sample_moments() {
        let spec = paper_problem(4);
        let data = sample_joint(&spec, 100_000, 4);
        let (r, q, n) = (32, 64, 32);
        let mut cov = DMatrix::<f64>::zeros(q, q);
        let mut mean_alpha = vec![0.0; r];
        let mut cross = DMatrix::<f64>::zeros(q, n);
        let mut eta_sq = vec![0.0; q];
        let mut w_sq = vec![0.0; n];
        for s in &data {
            let alpha = DVector::from_column_slice(&s.alpha);
            let eta = DVector::from_column_slice(&s.beta) - spec.c() * &alpha;
            let w = DVector::from_column_slice(&s.y) - spec.a() * &alpha;
            cov.ger(1.0, &eta, &eta, 1.0);
            cross.ger(1.0, &eta, &w, 1.0);
            for i in 0..q {
                eta_sq[i] += eta[i] * eta[i];
            }
            for i in 0..n {
                w_sq[i] += w[i] * w[i];
            }
            for i in 0..r {
                mean_alpha[i] += s.alpha[i];
            }
        }
        let m = data.len() as f64;
        cov /= m;
        assert!(linalg::frobenius_relative(&cov, spec.sigma_eta()) < 0.03);
        for v in mean_alpha {
            assert!((v / m).abs() < 4.0 / m.sqrt());
        }
        // Conditional independence: corr(η_i, w_j) ≈ 0.
        for i in 0..q {
            for j in 0..n {
                let corr = cross[(i, j)] / (eta_sq[i] * w_sq[j]).sqrt();
                assert!(corr.abs() < 0.02, "corr({i},{j}) = {corr}");
            }
        }
    }

    #[test]
    fn posterior_alpha_examples() {
        let spec = paper_problem(5);
        let post = posterior_alpha(&spec, &[0.0; 32]).unwrap();
        assert!(post.mean.iter().all(|&v| v == 0.0));
        // Brute-force oracle: Gauss–Jordan inverse of (1 + 1/0.09)·I.
        let c: f64 = (DMatrix::identity(32, 32) * (1.0 + 1.0 / 0.09)).try_inverse().unwrap()[(0, 0)];
        assert!((c - 0.082_568_807_339_449_54).abs() < 1e-12);
        let expected = DMatrix::identity(32, 32) * c;
        assert!(linalg::max_abs(&(&post.covariance - expected)) < 1e-10);

        let vague = spec.with_sigma_y(1e6).unwrap();
        let post = posterior_alpha(&vague, &[1.0; 32]).unwrap();
        assert!(linalg::max_abs(&(post.covariance - DMatrix::identity(32, 32))) < 1e-6);

        assert!(matches!(
            posterior_alpha(&spec, &[0.0; 3]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn oracle_conditional_examples() {
        let spec = small_problem(6);
        let zero = oracle_beta_given_alpha(&spec, &[0.0; 4]).unwrap();
        assert!(zero.mean.iter().all(|&v| v == 0.0));
        assert_eq!(&zero.covariance, spec.sigma_eta());
        let other = oracle_beta_given_alpha(&spec, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(other.covariance, zero.covariance);
        assert!(oracle_beta_given_alpha(&spec, &[0.0; 5]).is_err());
    }

    #[test]
    fn cholesky_sampling_covariance() {
        let spec = paper_problem(7);
        let mut rng = rng::stream(7, &[3]);
        let alpha = vec![0.5; 32];
        let mean = spec.c() * DVector::from_column_slice(&alpha);
        let mut cov = DMatrix::<f64>::zeros(64, 64);
        let draws = 100_000;
        for _ in 0..draws {
            let d = DVector::from_vec(spec.draw_beta(&alpha, &mut rng)) - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= draws as f64;
        assert!(linalg::frobenius_relative(&cov, spec.sigma_eta()) < 0.03);
    }

    #[test]
    fn marginal_limits() {
        let spec = paper_problem(8);
        let y = vec![0.3; 32];
        let vague = marginal_beta_given_y(&spec.with_sigma_y(1e6).unwrap(), &y).unwrap();
        let cct = spec.c() * spec.c().transpose();
        let prior = &cct + spec.sigma_eta();
        assert!((vague.covariance - prior).norm() <= 1e-6 * cct.norm());

        let sharp = marginal_beta_given_y(&spec.with_sigma_y(1e-6).unwrap(), &y).unwrap();
        assert!(linalg::frobenius_relative(&sharp.covariance, spec.sigma_eta()) < 1e-6);
    }

    #[test]
    fn total_variance_split_is_exact() {
        let spec = paper_problem(9);
        let y = vec![0.1; 32];
        let marg = marginal_beta_given_y(&spec, &y).unwrap();
        let post = posterior_alpha(&spec, &y).unwrap();
        let propagated = propagated_covariance(&spec, &post.covariance);
        let excess = &marg.covariance - spec.sigma_eta();
        assert!(linalg::max_abs(&(&excess - &propagated)) < 1e-10);
        assert!(linalg::min_eigenvalue(&excess) > -1e-10);
        assert!(linalg::max_asymmetry(&marg.covariance) < 1e-12);
        assert!(linalg::min_eigenvalue(&marg.covariance) > -1e-10);
    }

    #[test]
    fn document_roundtrip() {
        let spec = small_problem(10);
        let doc = GaussianSpecDocument::new(&spec);
        let text = serde_json::to_string(&doc).unwrap();
        let back: GaussianSpecDocument = serde_json::from_str(&text).unwrap();
        let spec2 = back.into_spec().unwrap();
        assert_eq!(spec2.c(), spec.c());
        assert_eq!(spec2.sigma_eta(), spec.sigma_eta());
    }
}
