//! Minimal dense row-major f64 matrices and vector helpers.
//!
//! The encoder is small enough that explicit loops beat a linear-algebra
//! dependency: every reduction runs in a fixed left-to-right order, which
//! is what makes bit-level determinism across thread counts possible.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wrap an existing row-major buffer; `data.len()` must be `rows*cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer does not match {rows}x{cols}"
        );
        Mat { rows, cols, data }
    }

    /// Build from per-row slices (used by tests and small fixtures).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out = self * x` (matrix times column vector).
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            out[r] = dot(self.row(r), x);
        }
    }

    /// `out = self^T * x`.
    pub fn matvec_t(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for r in 0..self.rows {
            axpy(out, x[r], self.row(r));
        }
    }

    /// Rank-one update `self += u * v^T`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            axpy(self.row_mut(r), u[r], v);
        }
    }

    /// `self += s * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Mat, s: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// Fail unless every row has unit L2 norm within `tol`.
    pub fn check_unit_rows(&self, tol: f64, what: &str) -> Result<()> {
        for r in 0..self.rows {
            let n = l2_norm(self.row(r));
            if (n - 1.0).abs() > tol {
                return Err(Error::Data(format!(
                    "{what}: row {r} has norm {n:.9}, expected unit within {tol:e}"
                )));
            }
        }
        Ok(())
    }
}

/// Left-to-right dot product (fixed reduction order).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += a * x`.
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for i in 0..y.len() {
        y[i] += a * x[i];
    }
}

pub fn l2_norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Normalize `x` to unit L2 norm in place, returning the original norm.
pub fn normalize(x: &mut [f64]) -> f64 {
    let n = l2_norm(x);
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_manual() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let mut y = vec![0.0; 3];
        a.matvec(&[1.0, -1.0], &mut y);
        assert_eq!(y, vec![-1.0, -1.0, -1.0]);

        let mut z = vec![0.0; 2];
        a.matvec_t(&[1.0, 0.0, -1.0], &mut z);
        assert_eq!(z, vec![-4.0, -4.0]);
    }

    #[test]
    fn outer_product_accumulates() {
        let mut a = Mat::zeros(2, 3);
        a.add_outer(&[1.0, 2.0], &[1.0, 0.0, -1.0]);
        assert_eq!(a.row(0), &[1.0, 0.0, -1.0]);
        assert_eq!(a.row(1), &[2.0, 0.0, -2.0]);
    }

    #[test]
    fn normalize_returns_norm_and_unit_result() {
        let mut x = vec![3.0, 4.0];
        let n = normalize(&mut x);
        assert_abs_diff_eq!(n, 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l2_norm(&x), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn unit_row_check_flags_bad_rows() {
        let m = Mat::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.0]]);
        assert!(m.check_unit_rows(1e-6, "embs").is_err());
    }
}
