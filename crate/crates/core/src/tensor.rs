//! Row-major dense matrices and the few kernels the network needs.

use serde::{Deserialize, Serialize};

/// Row-major `rows × cols` matrix of `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    /// Stack equal-length rows. An empty slice yields a `0 × cols` matrix.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// `n` copies of one row.
    pub fn repeat_row(row: &[f32], n: usize) -> Self {
        let mut data = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        Self {
            rows: n,
            cols: row.len(),
            data,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f32>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "hcat row mismatch");
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Columns `[start, start + width)` as a new matrix.
    pub fn col_slice(&self, start: usize, width: usize) -> Matrix {
        assert!(start + width <= self.cols);
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..start + width]);
        }
        Matrix {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    pub fn scale(&mut self, a: f32) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `out = x · wᵀ + bias` where `w` is `out_dim × in_dim` (row per output).
pub fn dense_forward(x: &Matrix, w: &[f32], bias: &[f32], out_dim: usize) -> Matrix {
    let in_dim = x.cols;
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(bias.len(), out_dim);
    let mut out = Matrix::zeros(x.rows, out_dim);
    for i in 0..x.rows {
        out.row_mut(i).copy_from_slice(bias);
    }
    if x.rows == 0 || in_dim == 0 {
        return out;
    }
    // SAFETY: slices are sized for the stated shapes; strides describe
    // x (rows×in, row-major), wᵀ (in×out, via column-major view of w) and out.
    unsafe {
        matrixmultiply::sgemm(
            x.rows,
            in_dim,
            out_dim,
            1.0,
            x.data.as_ptr(),
            in_dim as isize,
            1,
            w.as_ptr(),
            1,
            in_dim as isize,
            1.0,
            out.data.as_mut_ptr(),
            out_dim as isize,
            1,
        );
    }
    out
}

/// Input gradient of a dense layer: `dx = dy · w`.
pub fn dense_backward_input(dy: &Matrix, w: &[f32], in_dim: usize) -> Matrix {
    let out_dim = dy.cols;
    let mut dx = Matrix::zeros(dy.rows, in_dim);
    if dy.rows == 0 || out_dim == 0 {
        return dx;
    }
    unsafe {
        matrixmultiply::sgemm(
            dy.rows,
            out_dim,
            in_dim,
            1.0,
            dy.data.as_ptr(),
            out_dim as isize,
            1,
            w.as_ptr(),
            in_dim as isize,
            1,
            0.0,
            dx.data.as_mut_ptr(),
            in_dim as isize,
            1,
        );
    }
    dx
}

/// Accumulate weight and bias gradients: `dw += dyᵀ · x`, `db += Σ_rows dy`.
///
/// The bias sum runs in `f64` in row order so batch reductions are
/// deterministic and do not lose precision on large batches.
pub fn dense_backward_params(dy: &Matrix, x: &Matrix, dw: &mut [f32], db: &mut [f32]) {
    let out_dim = dy.cols;
    let in_dim = x.cols;
    debug_assert_eq!(dw.len(), out_dim * in_dim);
    if dy.rows > 0 && in_dim > 0 {
        unsafe {
            matrixmultiply::sgemm(
                out_dim,
                dy.rows,
                in_dim,
                1.0,
                dy.data.as_ptr(),
                1,
                out_dim as isize,
                x.data.as_ptr(),
                in_dim as isize,
                1,
                1.0,
                dw.as_mut_ptr(),
                in_dim as isize,
                1,
            );
        }
    }
    for (j, b) in db.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for i in 0..dy.rows {
            acc += dy.data[i * out_dim + j] as f64;
        }
        *b += acc as f32;
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f32) -> f32 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f32) -> f32 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Dot product with `f64` accumulation.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit-length copy; `None` for a zero (or non-finite) vector.
pub fn normalized(a: &[f32]) -> Option<Vec<f32>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(a.iter().map(|&x| (x as f64 / n) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Matrix, w: &[f32], b: &[f32], out: usize) -> Matrix {
        let mut y = Matrix::zeros(x.rows, out);
        for i in 0..x.rows {
            for j in 0..out {
                let mut s = b[j];
                for k in 0..x.cols {
                    s += x.row(i)[k] * w[j * x.cols + k];
                }
                y.row_mut(i)[j] = s;
            }
        }
        y
    }

    #[test]
    fn dense_matches_naive() {
        let x = Matrix::from_vec(3, 4, (0..12).map(|v| v as f32 * 0.1 - 0.5).collect());
        let w: Vec<f32> = (0..20).map(|v| (v as f32 * 0.37).sin()).collect();
        let b = vec![0.1, -0.2, 0.3, 0.0, 1.0];
        let y = dense_forward(&x, &w, &b, 5);
        let y0 = naive(&x, &w, &b, 5);
        for (a, e) in y.data.iter().zip(&y0.data) {
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn dense_backward_shapes_and_values() {
        let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let w: Vec<f32> = vec![1.0, 0.0, 2.0, -1.0, 1.0, 0.5];
        let dy = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]);
        let dx = dense_backward_input(&dy, &w, 3);
        assert_eq!(dx.data, vec![1.0, 0.0, 2.0, -2.0, 2.0, 1.0]);
        let mut dw = vec![0.0; 6];
        let mut db = vec![0.0; 2];
        dense_backward_params(&dy, &x, &mut dw, &mut db);
        assert_eq!(dw, vec![1.0, 2.0, 3.0, -2.0, 1.0, 0.0]);
        assert_eq!(db, vec![1.0, 2.0]);
    }

    #[test]
    fn silu_grad_matches_difference() {
        for &x in &[-3.0f32, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-3f64;
            let f = |v: f64| v / (1.0 + (-v).exp());
            let fd = (f(x as f64 + h) - f(x as f64 - h)) / (2.0 * h);
            assert!((silu_grad(x) as f64 - fd).abs() < 1e-5);
        }
    }
}
