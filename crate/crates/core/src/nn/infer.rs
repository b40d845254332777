//! Single-precision forward passes for sampling-time inference.

use super::mlp::Linear;
use super::tensor::gemm_f32;

/// `eˣ` in single precision, branch-free so activation loops vectorize.
#[inline(always)]
pub fn exp_f32(x: f32) -> f32 {
    const SHIFT: f32 = 12_582_912.0;
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    const COEFFS: [f32; 8] = [
        1.0 / 5040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ];
    let x = x.clamp(-87.0, 88.0);
    let t = x * std::f32::consts::LOG2_E + SHIFT;
    let n = t - SHIFT;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = COEFFS[0];
    for c in &COEFFS[1..] {
        p = p * r + c;
    }
    let scale = f32::from_bits(t.to_bits().wrapping_sub(SHIFT.to_bits()).wrapping_add(127) << 23);
    p * scale
}

pub fn silu_f32_in_place(v: &mut [f32]) {
    v.iter_mut().for_each(|x| *x /= 1.0 + exp_f32(-*x));
}

/// Frozen single-precision copy of a [`Linear`] layer.
#[derive(Debug, Clone)]
pub struct Dense32 {
    pub w: Vec<f32>,
    pub b: Vec<f32>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense32 {
    pub fn from_linear(layer: &Linear) -> Self {
        Self::from_parts(layer.w.as_slice(), &layer.b, layer.fan_in(), layer.fan_out())
    }

    pub fn from_parts(w: &[f64], b: &[f64], fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: w.iter().map(|&v| v as f32).collect(),
            b: b.iter().map(|&v| v as f32).collect(),
            fan_in,
            fan_out,
        }
    }

    /// `x·W + bias` for `rows` inputs, with `bias` overriding the stored one.
    pub fn forward_with_bias(&self, x: &[f32], rows: usize, bias: &[f32]) -> Vec<f32> {
        let mut z = vec![0.0f32; rows * self.fan_out];
        gemm_f32(x, rows, self.fan_in, &self.w, self.fan_out, &mut z);
        for row in z.chunks_exact_mut(self.fan_out) {
            row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
        }
        z
    }

    pub fn forward(&self, x: &[f32], rows: usize) -> Vec<f32> {
        self.forward_with_bias(x, rows, &self.b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Mat;
    use crate::rng;

    #[test]
    fn exp_f32_is_accurate() {
        let mut worst = 0.0_f64;
        for i in 0..=100_000 {
            let x = (-80.0 + 160.0 * i as f64 / 100_000.0) as f32;
            let exact = (x as f64).exp();
            worst = worst.max((exp_f32(x) as f64 - exact).abs() / exact);
        }
        assert!(worst < 1e-6, "{worst:e}");
    }

    #[test]
    fn dense_matches_double_precision_layer() {
        let layer = Linear::init(7, 5, &mut rng::stream(1, &[0]));
        let x = Mat::from_vec(3, 7, rng::normal_vec(&mut rng::stream(2, &[0]), 21));
        let exact = layer.forward(&x);
        let x32: Vec<f32> = x.as_slice().iter().map(|&v| v as f32).collect();
        let got = Dense32::from_linear(&layer).forward(&x32, 3);
        for (a, b) in exact.as_slice().iter().zip(&got) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
