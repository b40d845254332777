//! Conditional noise-prediction network `ε_φ(β_t, α, t)`.
//!
//! Two conditioning variants are supported. `Concat` feeds
//! `[β_t | α | emb(t)]` to a plain MLP. `Film` runs the MLP on `β_t` alone,
//! modulates every hidden activation as `h·(1 + γ) + δ` with `(γ, δ)` a linear
//! function of `[α | emb(t)]`, and adds a linear skip from `β_t` to the output.

use serde::{Deserialize, Serialize};

use super::infer::{silu_f32_in_place, Dense32};
use super::mlp::{Activation, Linear, Mlp, ParamSet};
use super::tensor::{gemm, Mat};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    #[default]
    Concat,
    Film,
}

/// Sinusoidal features of `s = t/T`: `[sin(ω_k s)…, cos(ω_k s)…]` with
/// frequencies `ω_k` spaced geometrically from 1 to 1000.
pub fn time_embedding(t: usize, t_steps: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let half = dim / 2;
    if half == 0 {
        return out;
    }
    let s = t as f64 / t_steps as f64;
    let log_max = 1000f64.ln();
    for k in 0..half {
        let frac = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
        let w = (log_max * frac).exp();
        out[k] = (w * s).sin();
        out[half + k] = (w * s).cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Denoiser {
    pub conditioning: Conditioning,
    pub beta_dim: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub t_steps: usize,
    pub trunk: Mlp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub film: Option<Linear>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<Linear>,
}

/// Training-time inputs: one row per example, each with its own `α` and `t`.
pub struct DenoiserBatch<'a> {
    pub x_t: &'a Mat,
    pub cond: &'a Mat,
    pub t: &'a [usize],
}

pub struct DenoiserCache {
    input: Mat,
    cond_input: Option<Mat>,
    film_out: Option<Mat>,
    hidden_inputs: Vec<Mat>,
    pre: Vec<Mat>,
    post: Vec<Mat>,
    trunk_cache: Option<super::mlp::MlpCache>,
}

/// Sampling-time state for many rows that share one `α`: a single-precision
/// copy of the network plus everything that depends only on `(α, t)`.
pub struct SharedConditioning {
    /// Trunk layers; for `Concat` the first keeps only its `β_t` rows.
    layers: Vec<Dense32>,
    skip: Option<Dense32>,
    /// Concat: first-layer bias for each `t`. Film: `(γ, δ)` for each `t`.
    per_t: Vec<f32>,
    per_t_width: usize,
}

impl Denoiser {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        beta_dim: usize,
        cond_dim: usize,
        time_dim: usize,
        t_steps: usize,
        hidden: usize,
        blocks: usize,
        conditioning: Conditioning,
        rng: &mut StreamRng,
    ) -> Self {
        let hidden_widths = vec![hidden; blocks];
        match conditioning {
            Conditioning::Concat => {
                let mut widths = vec![beta_dim + cond_dim + time_dim];
                widths.extend(&hidden_widths);
                widths.push(beta_dim);
                Self {
                    conditioning,
                    beta_dim,
                    cond_dim,
                    time_dim,
                    t_steps,
                    trunk: Mlp::new(&widths, Activation::Silu, rng),
                    film: None,
                    skip: None,
                }
            }
            Conditioning::Film => {
                let mut widths = vec![beta_dim];
                widths.extend(&hidden_widths);
                widths.push(beta_dim);
                let trunk = Mlp::new(&widths, Activation::Silu, rng);
                let mut film = Linear::init(cond_dim + time_dim, 2 * hidden * blocks, rng);
                // Start from the identity modulation.
                film.w.as_mut_slice().iter_mut().for_each(|v| *v *= 0.1);
                let skip = Linear::init(beta_dim, beta_dim, rng);
                Self {
                    conditioning,
                    beta_dim,
                    cond_dim,
                    time_dim,
                    t_steps,
                    trunk,
                    film: Some(film),
                    skip: Some(skip),
                }
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            trunk: self.trunk.zeros_like(),
            film: self.film.as_ref().map(Linear::zeros_like),
            skip: self.skip.as_ref().map(Linear::zeros_like),
            ..self.clone()
        }
    }

    fn hidden_layers(&self) -> usize {
        self.trunk.layers.len() - 1
    }

    fn hidden_width(&self) -> usize {
        self.trunk.layers[0].fan_out()
    }

    fn cond_with_time(&self, cond: &Mat, t: &[usize]) -> Mat {
        let width = self.cond_dim + self.time_dim;
        let mut out = Mat::zeros(cond.rows(), width);
        for i in 0..cond.rows() {
            let row = out.row_mut(i);
            row[..self.cond_dim].copy_from_slice(cond.row(i));
            row[self.cond_dim..].copy_from_slice(&time_embedding(t[i], self.t_steps, self.time_dim));
        }
        out
    }

    pub fn forward_cached(&self, batch: &DenoiserBatch<'_>) -> (Mat, DenoiserCache) {
        match self.conditioning {
            Conditioning::Concat => {
                let ct = self.cond_with_time(batch.cond, batch.t);
                let mut input = Mat::zeros(batch.x_t.rows(), self.beta_dim + ct.cols());
                input.set_columns(0, batch.x_t);
                input.set_columns(self.beta_dim, &ct);
                let (out, cache) = self.trunk.forward_cached(&input);
                (
                    out,
                    DenoiserCache {
                        input,
                        cond_input: None,
                        film_out: None,
                        hidden_inputs: Vec::new(),
                        pre: Vec::new(),
                        post: Vec::new(),
                        trunk_cache: Some(cache),
                    },
                )
            }
            Conditioning::Film => {
                let film = self.film.as_ref().expect("film layer present");
                let skip = self.skip.as_ref().expect("skip layer present");
                let ct = self.cond_with_time(batch.cond, batch.t);
                let f = film.forward(&ct);
                let h_width = self.hidden_width();
                let mut hidden_inputs = Vec::new();
                let mut pre = Vec::new();
                let mut post = Vec::new();
                let mut h = batch.x_t.clone();
                for k in 0..self.hidden_layers() {
                    let z = self.trunk.layers[k].forward(&h);
                    let a = Activation::Silu.apply_mat(&z);
                    let mut next = a.clone();
                    for i in 0..next.rows() {
                        let frow = f.row(i);
                        let gamma = &frow[2 * k * h_width..(2 * k + 1) * h_width];
                        let delta = &frow[(2 * k + 1) * h_width..(2 * k + 2) * h_width];
                        for ((v, g), d) in next.row_mut(i).iter_mut().zip(gamma).zip(delta) {
                            *v = *v * (1.0 + g) + d;
                        }
                    }
                    hidden_inputs.push(h);
                    pre.push(z);
                    post.push(a);
                    h = next;
                }
                let mut out = self.trunk.layers.last().unwrap().forward(&h);
                let s = skip.forward(batch.x_t);
                for (o, v) in out.as_mut_slice().iter_mut().zip(s.as_slice()) {
                    *o += v;
                }
                hidden_inputs.push(h);
                (
                    out,
                    DenoiserCache {
                        input: batch.x_t.clone(),
                        cond_input: Some(ct),
                        film_out: Some(f),
                        hidden_inputs,
                        pre,
                        post,
                        trunk_cache: None,
                    },
                )
            }
        }
    }

    pub fn forward(&self, batch: &DenoiserBatch<'_>) -> Mat {
        self.forward_cached(batch).0
    }

    /// Accumulates parameter gradients for upstream gradient `d_out`.
    pub fn backward(&self, cache: &DenoiserCache, d_out: Mat, grad: &mut Denoiser) {
        match self.conditioning {
            Conditioning::Concat => {
                let tc = cache.trunk_cache.as_ref().expect("concat cache");
                self.trunk.backward(tc, d_out, &mut grad.trunk, false);
            }
            Conditioning::Film => {
                let k_hidden = self.hidden_layers();
                let h_width = self.hidden_width();
                let f = cache.film_out.as_ref().expect("film cache");
                self.skip.as_ref().unwrap().backward(
                    &cache.input,
                    &d_out,
                    grad.skip.as_mut().unwrap(),
                    false,
                );
                let mut dh = self.trunk.layers[k_hidden]
                    .backward(&cache.hidden_inputs[k_hidden], &d_out, &mut grad.trunk.layers[k_hidden], true)
                    .unwrap();
                let mut d_film = Mat::zeros(f.rows(), f.cols());
                for k in (0..k_hidden).rev() {
                    let a = &cache.post[k];
                    let mut dz = dh.clone();
                    for i in 0..dz.rows() {
                        let frow = f.row(i);
                        let dfrow = d_film.row_mut(i);
                        for j in 0..h_width {
                            let g = frow[2 * k * h_width + j];
                            let d = dh.get(i, j);
                            dfrow[2 * k * h_width + j] = d * a.get(i, j);
                            dfrow[(2 * k + 1) * h_width + j] = d;
                            dz.set(i, j, d * (1.0 + g));
                        }
                    }
                    Activation::Silu.backprop_in_place(&cache.pre[k], &mut dz);
                    let dx = self.trunk.layers[k].backward(
                        &cache.hidden_inputs[k],
                        &dz,
                        &mut grad.trunk.layers[k],
                        k > 0,
                    );
                    if let Some(dx) = dx {
                        dh = dx;
                    }
                }
                self.film.as_ref().unwrap().backward(
                    cache.cond_input.as_ref().unwrap(),
                    &d_film,
                    grad.film.as_mut().unwrap(),
                    false,
                );
            }
        }
    }

    /// Precomputes everything that depends only on `(α, t)`.
    pub fn share_conditioning(&self, cond: &[f64]) -> SharedConditioning {
        let t_steps = self.t_steps;
        let cond_rows = Mat::from_vec(t_steps, self.cond_dim, cond.repeat(t_steps));
        let ts: Vec<usize> = (1..=t_steps).collect();
        let ct = self.cond_with_time(&cond_rows, &ts);
        let mut layers: Vec<Dense32> = self.trunk.layers.iter().map(Dense32::from_linear).collect();
        let per_t = match self.conditioning {
            Conditioning::Concat => {
                let w0 = &self.trunk.layers[0];
                let width = w0.fan_out();
                let split = self.beta_dim * width;
                layers[0] = Dense32::from_parts(&w0.w.as_slice()[..split], &w0.b, self.beta_dim, width);
                let w_rest = Mat::from_vec(ct.cols(), width, w0.w.as_slice()[split..].to_vec());
                let mut per_t = Mat::zeros(t_steps, width);
                gemm(1.0, &ct, false, &w_rest, false, 0.0, &mut per_t);
                per_t.add_row_vector(&w0.b);
                per_t
            }
            Conditioning::Film => self.film.as_ref().unwrap().forward(&ct),
        };
        SharedConditioning {
            layers,
            skip: self.skip.as_ref().map(Dense32::from_linear),
            per_t_width: per_t.cols(),
            per_t: per_t.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    /// `ε̂` for a batch of `x_t` rows that all share the prepared conditioning,
    /// evaluated in single precision.
    pub fn predict_shared(&self, shared: &SharedConditioning, x_t: &Mat, t: usize) -> Mat {
        let rows = x_t.rows();
        let x32: Vec<f32> = x_t.as_slice().iter().map(|&v| v as f32).collect();
        let per_t = &shared.per_t[(t - 1) * shared.per_t_width..t * shared.per_t_width];
        let last = shared.layers.len() - 1;
        let mut h = x32.clone();
        for (k, layer) in shared.layers[..last].iter().enumerate() {
            let mut z = match self.conditioning {
                Conditioning::Concat if k == 0 => layer.forward_with_bias(&h, rows, per_t),
                _ => layer.forward(&h, rows),
            };
            silu_f32_in_place(&mut z);
            if self.conditioning == Conditioning::Film {
                let w = layer.fan_out;
                let gamma = &per_t[2 * k * w..(2 * k + 1) * w];
                let delta = &per_t[(2 * k + 1) * w..(2 * k + 2) * w];
                for row in z.chunks_exact_mut(w) {
                    for ((v, g), d) in row.iter_mut().zip(gamma).zip(delta) {
                        *v = *v * (1.0 + g) + d;
                    }
                }
            }
            h = z;
        }
        let mut out = shared.layers[last].forward(&h, rows);
        if let Some(skip) = &shared.skip {
            let s = skip.forward(&x32, rows);
            out.iter_mut().zip(&s).for_each(|(o, v)| *o += v);
        }
        Mat::from_vec(rows, self.beta_dim, out.into_iter().map(f64::from).collect())
    }

    /// `½·Σ‖ε̂ − target‖² / B` on a fixed batch.
    pub fn squared_error_loss(&self, batch: &DenoiserBatch<'_>, target: &Mat) -> f64 {
        super::mlp::squared_error(&self.forward(batch), target).0
    }

    pub fn squared_error_grad(&self, batch: &DenoiserBatch<'_>, target: &Mat) -> (f64, Denoiser) {
        let (out, cache) = self.forward_cached(batch);
        let (loss, d) = super::mlp::squared_error(&out, target);
        let mut grad = self.zeros_like();
        self.backward(&cache, d, &mut grad);
        (loss, grad)
    }
}

impl ParamSet for Denoiser {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut b = self.trunk.blocks();
        if let Some(f) = &self.film {
            b.extend(f.blocks());
        }
        if let Some(s) = &self.skip {
            b.extend(s.blocks());
        }
        b
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.trunk.blocks_mut();
        if let Some(f) = &mut self.film {
            b.extend(f.blocks_mut());
        }
        if let Some(s) = &mut self.skip {
            b.extend(s.blocks_mut());
        }
        b
    }
}
