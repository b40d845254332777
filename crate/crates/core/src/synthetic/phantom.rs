//! Piecewise-smooth procedural phantoms and PGM export.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::fourier::FourierToyProblem;
use crate::error::{Error, Result};
use crate::rng::{self, tags};

/// One phantom on a `side^dims` grid with values in `[0, 1]`.
///
/// Smooth Gaussian bumps are superposed with a few constant-valued boxes,
/// then the image is min-max normalized.
pub fn phantom(side: usize, dims: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[tags::PHANTOM]);
    let n = side.pow(dims as u32);
    let coord = |pixel: usize| -> [f64; 2] {
        let (i, j) = if dims == 1 { (pixel, 0) } else { (pixel / side, pixel % side) };
        [(i as f64 + 0.5) / side as f64, (j as f64 + 0.5) / side as f64]
    };
    let mut img = vec![0.0; n];
    for _ in 0..r.random_range(3..=6) {
        let c = [r.random::<f64>(), r.random::<f64>()];
        let w: f64 = r.random_range(0.08..0.3);
        let amp: f64 = r.random_range(-0.5..1.0);
        for (p, v) in img.iter_mut().enumerate() {
            let x = coord(p);
            let d2 = (x[0] - c[0]).powi(2) + if dims == 2 { (x[1] - c[1]).powi(2) } else { 0.0 };
            *v += amp * (-d2 / (2.0 * w * w)).exp();
        }
    }
    for _ in 0..r.random_range(1..=3) {
        let lo = [r.random_range(0.0..0.7), r.random_range(0.0..0.7)];
        let hi = [lo[0] + r.random_range(0.15..0.4), lo[1] + r.random_range(0.15..0.4)];
        let level: f64 = r.random_range(0.3..1.0);
        for (p, v) in img.iter_mut().enumerate() {
            let x = coord(p);
            let inside = (lo[0]..hi[0]).contains(&x[0]) && (dims == 1 || (lo[1]..hi[1]).contains(&x[1]));
            if inside {
                *v += level;
            }
        }
    }
    let (min, max) = img
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = max - min;
    img.iter_mut()
        .for_each(|v| *v = if span > 0.0 { ((*v - min) / span).clamp(0.0, 1.0) } else { 0.0 });
    img
}

/// `count` phantoms for the toy grid; image `i` uses `derive_seed(seed, [i])`.
pub fn synth_images(problem: &FourierToyProblem, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::InvalidConfig("image count must be at least 1".into()));
    }
    let (side, dims) = (problem.config.side, problem.config.dims);
    Ok((0..count)
        .into_par_iter()
        .map(|i| phantom(side, dims, rng::derive_seed(seed, &[i as u64])))
        .collect())
}

/// Plain (P2) PGM text with 8-bit gray levels; values are clamped to `[0, 1]`.
pub fn pgm_string(image: &[f64], width: usize) -> Result<String> {
    if width == 0 || image.len() % width != 0 {
        return Err(Error::Dimension {
            what: "PGM image width",
            expected: width,
            got: image.len(),
        });
    }
    let height = image.len() / width;
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in image.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, image: &[f64], width: usize) -> Result<()> {
    let text = pgm_string(image, width)?;
    std::fs::File::create(path)?.write_all(text.as_bytes())?;
    Ok(())
}
