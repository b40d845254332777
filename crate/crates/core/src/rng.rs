//! Seeded random streams.
//!
//! All randomness flows through ChaCha8, a counter-based generator whose
//! 64-bit stream selector gives independent substreams for one base seed.
//! A stream is addressed by `(base_seed, path)` where `path` is a short list
//! of integers (stage tag, case index, ...) folded into the stream id with
//! SplitMix64. Reproducibility is bit-exact within one build.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Stream tags used across the crate. Keeping them in one place avoids
/// two stages silently sharing a substream.
pub mod tags {
    pub const OPERATOR_NOISE: u64 = 0x01;
    pub const GAUSS_A: u64 = 0x10;
    pub const GAUSS_C: u64 = 0x11;
    pub const GAUSS_Q: u64 = 0x12;
    pub const GAUSS_JOINT: u64 = 0x13;
    pub const ORACLE_SAMPLE: u64 = 0x14;
    pub const NET_INIT: u64 = 0x20;
    pub const TRAIN_BATCH: u64 = 0x21;
    pub const TRAIN_NOISE: u64 = 0x22;
    pub const DDPM_SAMPLE: u64 = 0x23;
    pub const VAE_SAMPLE: u64 = 0x24;
    pub const GRADCHECK: u64 = 0x25;
    pub const SBC_CASE: u64 = 0x30;
    pub const VARCAL: u64 = 0x31;
    pub const AMBIGUITY: u64 = 0x32;
    pub const SWEEP: u64 = 0x33;
    pub const LIPSCHITZ: u64 = 0x34;
    pub const CASCADE: u64 = 0x35;
    pub const FOURIER_MASK: u64 = 0x40;
    pub const PHANTOM: u64 = 0x41;
    pub const LEADFIELD: u64 = 0x42;
    pub const PATCH: u64 = 0x43;
    pub const SNR_NOISE: u64 = 0x44;
    pub const SPLIT: u64 = 0x50;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a path of integers into a single stream id.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Derives a child seed, used when a callee takes a plain `u64` seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    splitmix64(seed ^ stream_id(path))
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(path));
    rng
}

#[inline]
pub fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn fill_normal(rng: &mut StreamRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

pub fn normal_vec(rng: &mut StreamRng, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    fill_normal(rng, &mut v);
    v
}
