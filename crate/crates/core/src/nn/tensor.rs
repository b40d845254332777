//! Row-major dense matrix used by the network code. Rows are samples.

use faer::linalg::matmul::matmul as faer_matmul;
use faer::{Accum, MatMut, MatRef, Par};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec shape mismatch");
        Self { rows, cols, data }
    }

    /// Stacks equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "Mat::from_rows ragged input");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Copies rows `idx` into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    /// Writes `src` into columns `[offset, offset + src.cols)`.
    pub fn set_columns(&mut self, offset: usize, src: &Mat) {
        assert_eq!(src.rows, self.rows);
        assert!(offset + src.cols <= self.cols);
        for i in 0..self.rows {
            self.data[i * self.cols + offset..i * self.cols + offset + src.cols]
                .copy_from_slice(src.row(i));
        }
    }

    /// Columns `[offset, offset + width)` as a new matrix.
    pub fn columns(&self, offset: usize, width: usize) -> Mat {
        assert!(offset + width <= self.cols);
        let mut out = Mat::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[offset..offset + width]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in m.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        let n = self.rows.max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Unbiased column variances (zero for fewer than two rows).
    pub fn column_variances(&self) -> Vec<f64> {
        let mean = self.column_means();
        let mut var = vec![0.0; self.cols];
        for i in 0..self.rows {
            for ((acc, v), m) in var.iter_mut().zip(self.row(i)).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        if self.rows < 2 {
            return vec![0.0; self.cols];
        }
        let d = (self.rows - 1) as f64;
        var.iter_mut().for_each(|v| *v /= d);
        var
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols);
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
    }
}

/// `c ← alpha·op(a)·op(b) + beta·c` where `op` optionally transposes.
pub fn gemm(alpha: f64, a: &Mat, trans_a: bool, b: &Mat, trans_b: bool, beta: f64, c: &mut Mat) {
    let a_view = MatRef::from_row_major_slice(&a.data, a.rows, a.cols);
    let b_view = MatRef::from_row_major_slice(&b.data, b.rows, b.cols);
    let a_view = if trans_a { a_view.transpose() } else { a_view };
    let b_view = if trans_b { b_view.transpose() } else { b_view };
    assert_eq!(a_view.ncols(), b_view.nrows(), "gemm inner dimension mismatch");
    assert_eq!(
        (c.rows, c.cols),
        (a_view.nrows(), b_view.ncols()),
        "gemm output shape mismatch"
    );
    let accum = if beta == 0.0 {
        Accum::Replace
    } else {
        if beta != 1.0 {
            c.data.iter_mut().for_each(|v| *v *= beta);
        }
        Accum::Add
    };
    let (rows, cols) = (c.rows, c.cols);
    let c_view = MatMut::from_row_major_slice_mut(&mut c.data, rows, cols);
    faer_matmul(c_view, accum, a_view, b_view, alpha, Par::Seq);
    clear_upper_vector_state();
}

/// Single-precision `c ← op(a)·b` on row-major slices, `a` being `m × k`
/// (or `k × m` when transposed) and `b` `k × n`.
pub fn gemm_f32(a: &[f32], m: usize, k: usize, b: &[f32], n: usize, c: &mut [f32]) {
    assert_eq!(a.len(), m * k, "gemm_f32 lhs shape mismatch");
    assert_eq!(b.len(), k * n, "gemm_f32 rhs shape mismatch");
    assert_eq!(c.len(), m * n, "gemm_f32 output shape mismatch");
    let a_view = MatRef::from_row_major_slice(a, m, k);
    let b_view = MatRef::from_row_major_slice(b, k, n);
    let c_view = MatMut::from_row_major_slice_mut(c, m, n);
    faer_matmul(c_view, Accum::Replace, a_view, b_view, 1.0f32, Par::Seq);
    clear_upper_vector_state();
}

/// The matrix kernels use wide vector registers and may leave their upper
/// halves dirty, which makes the legacy-encoded scalar code that follows run
/// several times slower on some x86 cores.
#[inline]
fn clear_upper_vector_state() {
    #[cfg(target_arch = "x86_64")]
    {
        #[target_feature(enable = "avx")]
        unsafe fn zero_upper() {
            std::arch::x86_64::_mm256_zeroupper();
        }
        if std::arch::is_x86_feature_detected!("avx") {
            // SAFETY: the AVX feature was detected at runtime.
            unsafe { zero_upper() }
        }
    }
}

/// `op(a)·op(b)` into a fresh matrix.
pub fn matmul(a: &Mat, trans_a: bool, b: &Mat, trans_b: bool) -> Mat {
    let m = if trans_a { a.cols } else { a.rows };
    let n = if trans_b { b.rows } else { b.cols };
    let mut c = Mat::zeros(m, n);
    gemm(1.0, a, trans_a, b, trans_b, 0.0, &mut c);
    c
}

impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(Mat::from_rows(&rows, cols))
    }
}
