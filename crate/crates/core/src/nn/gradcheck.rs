//! Finite-difference verification of the hand-written backward passes.

use rand::Rng;
use serde::Serialize;

use super::mlp::ParamSet;
use crate::rng::{self, tags};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error with a small floor on the denominator so that vanishing
/// gradients are compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `grad_fn`'s analytic gradient with central differences of `loss_fn`
/// on `probe_count` random parameter coordinates. The step is `1e-5·max(1, |θ|)`.
pub fn gradient_check<P, L, G>(
    params: &mut P,
    loss_fn: L,
    grad_fn: G,
    probe_count: usize,
    tolerance: f64,
    seed: u64,
) -> GradCheckReport
where
    P: ParamSet,
    L: Fn(&P) -> f64,
    G: Fn(&P) -> P,
{
    let grad = grad_fn(params);
    let grad_blocks: Vec<Vec<f64>> = grad.blocks().iter().map(|b| b.to_vec()).collect();
    let sizes: Vec<usize> = grad_blocks.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = rng::stream(seed, &[tags::GRADCHECK]);

    let mut max_rel = 0.0_f64;
    let mut max_abs = 0.0_f64;
    for _ in 0..probe_count {
        let mut flat = rng.random_range(0..total);
        let mut block = 0;
        while flat >= sizes[block] {
            flat -= sizes[block];
            block += 1;
        }
        let original = params.blocks()[block][flat];
        let h = 1e-5 * original.abs().max(1.0);
        params.blocks_mut()[block][flat] = original + h;
        let up = loss_fn(params);
        params.blocks_mut()[block][flat] = original - h;
        let down = loss_fn(params);
        params.blocks_mut()[block][flat] = original;

        let numeric = (up - down) / (2.0 * h);
        let analytic = grad_blocks[block][flat];
        max_rel = max_rel.max(relative_error(analytic, numeric));
        max_abs = max_abs.max((analytic - numeric).abs());
    }
    GradCheckReport {
        probes: probe_count,
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        tolerance,
        passed: max_rel <= tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Activation, Mlp};
    use crate::nn::tensor::Mat;

    fn probe_batch(seed: u64, rows: usize, cols: usize) -> Mat {
        let mut r = rng::stream(seed, &[1]);
        Mat::from_vec(rows, cols, rng::normal_vec(&mut r, rows * cols))
    }

    #[test]
    fn linear_network_is_exact() {
        let mut net = Mlp::new(&[4, 6, 3], Activation::Identity, &mut rng::stream(1, &[0]));
        let x = probe_batch(2, 5, 4);
        let t = probe_batch(3, 5, 3);
        let report = gradient_check(
            &mut net,
            |n| n.squared_error_loss(&x, &t),
            |n| n.squared_error_grad(&x, &t).1,
            64,
            1e-7,
            0,
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn two_block_silu_mlp() {
        let mut net = Mlp::new(&[6, 32, 32, 4], Activation::Silu, &mut rng::stream(4, &[0]));
        let x = probe_batch(5, 8, 6);
        let t = probe_batch(6, 8, 4);
        let report = gradient_check(
            &mut net,
            |n| n.squared_error_loss(&x, &t),
            |n| n.squared_error_grad(&x, &t).1,
            128,
            1e-4,
            1,
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn zero_input_bias_gradients() {
        let mut net = Mlp::new(&[3, 8, 2], Activation::Silu, &mut rng::stream(7, &[0]));
        // Nonzero biases so the zero input still produces a nontrivial output.
        for l in &mut net.layers {
            l.b.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * (i as f64 + 1.0));
        }
        let x = Mat::zeros(4, 3);
        let t = probe_batch(8, 4, 2);
        let (_, grad) = net.squared_error_grad(&x, &t);
        for (li, layer) in grad.layers.iter().enumerate() {
            for k in 0..layer.b.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let h = 1e-5;
                plus.layers[li].b[k] += h;
                minus.layers[li].b[k] -= h;
                let fd = (plus.squared_error_loss(&x, &t) - minus.squared_error_loss(&x, &t)) / (2.0 * h);
                assert!((fd - layer.b[k]).abs() <= 1e-6, "layer {li} bias {k}");
            }
            // Zero input: first-layer weight gradients vanish.
            if li == 0 {
                assert!(layer.w.as_slice().iter().all(|&v| v == 0.0));
            }
        }
    }
}
