//! Row-major dense matrices and the three GEMM shapes the networks need.

use matrixmultiply::dgemm;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out = x · wᵀ + bias` where `w` is `out_cols × x.cols` row-major.
pub fn affine(x: &Matrix, w: &[f64], bias: &[f64]) -> Matrix {
    let n = bias.len();
    let k = x.cols;
    debug_assert_eq!(w.len(), n * k);
    let mut out = Matrix::zeros(x.rows, n);
    for r in 0..x.rows {
        out.row_mut(r).copy_from_slice(bias);
    }
    if x.rows == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: all pointers come from slices sized for the given shapes and
    // strides; `out` does not alias the inputs.
    unsafe {
        dgemm(
            x.rows,
            k,
            n,
            1.0,
            x.data.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            1.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// `dx = dy · w` for `w` of shape `dy.cols × in_cols`.
pub fn backprop_input(dy: &Matrix, w: &[f64], in_cols: usize) -> Matrix {
    let n = dy.cols;
    debug_assert_eq!(w.len(), n * in_cols);
    let mut dx = Matrix::zeros(dy.rows, in_cols);
    if dy.rows == 0 || n == 0 || in_cols == 0 {
        return dx;
    }
    // SAFETY: see `affine`.
    unsafe {
        dgemm(
            dy.rows,
            n,
            in_cols,
            1.0,
            dy.data.as_ptr(),
            n as isize,
            1,
            w.as_ptr(),
            in_cols as isize,
            1,
            0.0,
            dx.data.as_mut_ptr(),
            in_cols as isize,
            1,
        );
    }
    dx
}

/// Accumulates `dw += dyᵀ · x` and `db += column sums of dy`.
pub fn accumulate_weight_grad(dy: &Matrix, x: &Matrix, dw: &mut [f64], db: &mut [f64]) {
    let n = dy.cols;
    let k = x.cols;
    debug_assert_eq!(dy.rows, x.rows);
    debug_assert_eq!(dw.len(), n * k);
    for row in dy.iter_rows() {
        for (b, g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    if dy.rows == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: see `affine`; `dw` is a distinct gradient buffer.
    unsafe {
        dgemm(
            n,
            dy.rows,
            k,
            1.0,
            dy.data.as_ptr(),
            1,
            n as isize,
            x.data.as_ptr(),
            k as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}
