//! Range models trained on the Gaussian problem against the Bayes floor.

use nullcal::gaussian::{build_problem, posterior_alpha_covariance, sample_joint, GaussianParams};
use nullcal::nn::{train_range, Mat, RangeConfig, RangeKind};

fn split(count: usize, seed: u64) -> (Mat, Mat) {
    let spec = build_problem(GaussianParams::default()).unwrap();
    let joint = sample_joint(&spec, count, seed);
    let ys: Vec<&[f64]> = joint.iter().map(|s| s.y.as_slice()).collect();
    let alphas: Vec<&[f64]> = joint.iter().map(|s| s.alpha.as_slice()).collect();
    (Mat::from_rows(&ys, spec.n()), Mat::from_rows(&alphas, spec.r()))
}

fn test_mse(kind: RangeKind, epochs: usize) -> (f64, f64) {
    let spec = build_problem(GaussianParams::default()).unwrap();
    let floor = posterior_alpha_covariance(&spec).trace();
    let (ys, alphas) = split(100_000, 1);
    let cfg = RangeConfig {
        kind,
        epochs,
        ..RangeConfig::default()
    };
    let model = train_range(&ys, &alphas, &cfg).unwrap().model;
    let (ty, ta) = split(4_000, 2);
    let pred = model.predict_batch(&ty).unwrap();
    let sse: f64 = pred
        .as_slice()
        .iter()
        .zip(ta.as_slice())
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    (sse / ty.rows() as f64, floor)
}

#[test]
fn mlp_reaches_the_bayes_floor() {
    let (mse, floor) = test_mse(RangeKind::Mlp, 30);
    assert!(mse <= 1.05 * floor, "mse {mse} vs floor {floor}");
}

#[test]
fn ridge_reaches_the_bayes_floor() {
    let (mse, floor) = test_mse(RangeKind::Ridge, 1);
    assert!(mse <= 1.05 * floor, "mse {mse} vs floor {floor}");
    assert!(mse >= 0.9 * floor, "mse {mse} below the floor {floor}");
}
