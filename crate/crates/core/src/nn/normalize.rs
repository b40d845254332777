use serde::{Deserialize, Serialize};

use super::tensor::Mat;

/// Per-dimension affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Dimensions that had no spread in the fitted data.
    #[serde(default)]
    pub constant: Vec<bool>,
}

impl Standardizer {
    /// Dimensions with (near-)zero spread keep unit scale.
    pub fn fit(data: &Mat) -> Self {
        let mean = data.column_means();
        let spread: Vec<f64> = data.column_variances().into_iter().map(f64::sqrt).collect();
        let constant: Vec<bool> = spread
            .iter()
            .zip(&mean)
            .map(|(s, m)| !(*s > 1e-12 * m.abs().max(1.0)))
            .collect();
        let scale = spread
            .iter()
            .zip(&constant)
            .map(|(&s, &c)| if c { 1.0 } else { s })
            .collect();
        Self { mean, scale, constant }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
            constant: vec![false; dim],
        }
    }

    pub fn is_constant(&self, j: usize) -> bool {
        self.constant.get(j).copied().unwrap_or(false)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, data: &Mat) -> Mat {
        let mut out = data.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn invert_in_place(&self, data: &mut Mat) {
        for i in 0..data.rows() {
            for ((v, m), s) in data.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = *v * s + m;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_degenerate_columns() {
        let data = Mat::from_rows(&[[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]], 2);
        let s = Standardizer::fit(&data);
        assert_eq!(s.scale[1], 1.0);
        assert!(s.is_constant(1) && !s.is_constant(0));
        let mut z = s.apply(&data);
        assert!(z.column_means().iter().all(|m| m.abs() < 1e-15));
        s.invert_in_place(&mut z);
        assert_eq!(z, data);
    }
}
