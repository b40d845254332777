//! Dense layers and plain feed-forward networks with hand-written backprop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Mat};
use crate::rng::StreamRng;

/// Flat access to trainable parameter blocks, in a fixed order.
pub trait ParamSet {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn fill_zero(&mut self) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Identity,
}

/// `eˣ` by Cody–Waite reduction and a degree-12 Taylor polynomial, written
/// without branches so that activation loops vectorize. Relative error is
/// a few ulp on `[−708, 709]`; inputs outside are clamped.
#[inline(always)]
pub fn exp_vectorizable(x: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    const LN2_HI: f64 = 0.693_147_180_369_123_8;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const COEFFS: [f64; 13] = [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ];
    let x = x.clamp(-708.0, 709.0);
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let n = t - SHIFT;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = COEFFS[0];
    for c in &COEFFS[1..] {
        p = p * r + c;
    }
    let scale = f64::from_bits(t.to_bits().wrapping_sub(SHIFT.to_bits()).wrapping_add(1023) << 52);
    p * scale
}

#[inline(always)]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + exp_vectorizable(-z))
}

impl Activation {
    #[inline(always)]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z * sigmoid(z),
            Activation::Identity => z,
        }
    }

    #[inline(always)]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn apply_mat(self, z: &Mat) -> Mat {
        let mut out = z.clone();
        if self == Activation::Silu {
            out.as_mut_slice().iter_mut().for_each(|v| *v *= sigmoid(*v));
        }
        out
    }

    /// `dz = dh ⊙ act'(z)`, in place on `dh`.
    pub fn backprop_in_place(self, z: &Mat, dh: &mut Mat) {
        if self == Activation::Identity {
            return;
        }
        for (d, &zv) in dh.as_mut_slice().iter_mut().zip(z.as_slice()) {
            let s = sigmoid(zv);
            *d *= s * (1.0 + zv * (1.0 - s));
        }
    }
}

/// Affine layer `z = x·W + b` with `W` stored fan-in × fan-out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    /// Fan-in-scaled uniform weights `U(−1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut StreamRng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            w: Mat::from_vec(fan_in, fan_out, data),
            b: vec![0.0; fan_out],
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Mat::zeros(fan_in, fan_out),
            b: vec![0.0; fan_out],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.fan_in(), self.fan_out())
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut z = Mat::zeros(x.rows(), self.fan_out());
        gemm(1.0, x, false, &self.w, false, 0.0, &mut z);
        z.add_row_vector(&self.b);
        z
    }

    /// Accumulates `∂L/∂W`, `∂L/∂b` into `grad`; returns `∂L/∂x` when asked.
    pub fn backward(&self, x: &Mat, dz: &Mat, grad: &mut Linear, need_dx: bool) -> Option<Mat> {
        gemm(1.0, x, true, dz, false, 1.0, &mut grad.w);
        for i in 0..dz.rows() {
            for (g, d) in grad.b.iter_mut().zip(dz.row(i)) {
                *g += d;
            }
        }
        need_dx.then(|| {
            let mut dx = Mat::zeros(dz.rows(), self.fan_in());
            gemm(1.0, dz, false, &self.w, true, 0.0, &mut dx);
            dx
        })
    }
}

impl ParamSet for Linear {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), &self.b]
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), &mut self.b]
    }
}

/// Stack of [`Linear`] layers with an activation after every hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Linear>,
}

/// Activations saved by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Mat>,
    pre: Vec<Mat>,
}

impl Mlp {
    /// `widths = [in, hidden..., out]`.
    pub fn new(widths: &[usize], activation: Activation, rng: &mut StreamRng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Self { activation, layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            activation: self.activation,
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in()];
        w.extend(self.layers.iter().map(Linear::fan_out));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            h = if i < last { self.activation.apply_mat(&z) } else { z };
        }
        h
    }

    pub fn forward_cached(&self, x: &Mat) -> (Mat, MlpCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            if i < last {
                h = self.activation.apply_mat(&z);
                pre.push(z);
            } else {
                h = z;
            }
        }
        (h, MlpCache { inputs, pre })
    }

    /// Accumulates parameter gradients for upstream gradient `d_out`.
    pub fn backward(&self, cache: &MlpCache, d_out: Mat, grad: &mut Mlp, need_dx: bool) -> Option<Mat> {
        let mut d = d_out;
        for i in (0..self.layers.len()).rev() {
            let want_dx = i > 0 || need_dx;
            let dx = self.layers[i].backward(&cache.inputs[i], &d, &mut grad.layers[i], want_dx);
            match dx {
                Some(mut dx) if i > 0 => {
                    self.activation.backprop_in_place(&cache.pre[i - 1], &mut dx);
                    d = dx;
                }
                other => return other,
            }
        }
        None
    }

    /// Mean-over-batch squared error `½·Σ‖f(x) − t‖² / B` and its gradient.
    pub fn squared_error_grad(&self, x: &Mat, target: &Mat) -> (f64, Mlp) {
        let (out, cache) = self.forward_cached(x);
        let (loss, d_out) = squared_error(&out, target);
        let mut grad = self.zeros_like();
        self.backward(&cache, d_out, &mut grad, false);
        (loss, grad)
    }

    pub fn squared_error_loss(&self, x: &Mat, target: &Mat) -> f64 {
        squared_error(&self.forward(x), target).0
    }
}

/// `½·Σ‖out − target‖² / B` and its derivative with respect to `out`.
pub fn squared_error(out: &Mat, target: &Mat) -> (f64, Mat) {
    assert_eq!((out.rows(), out.cols()), (target.rows(), target.cols()));
    let inv_b = 1.0 / out.rows().max(1) as f64;
    let mut d = out.clone();
    let mut loss = 0.0;
    for (dv, tv) in d.as_mut_slice().iter_mut().zip(target.as_slice()) {
        let r = *dv - tv;
        loss += 0.5 * r * r;
        *dv = r * inv_b;
    }
    (loss * inv_b, d)
}

impl ParamSet for Mlp {
    fn blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.blocks()).collect()
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.blocks_mut()).collect()
    }
}
