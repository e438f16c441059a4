use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`. Row `r` holds one sample of a batch.
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "matrix storage",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// A single row vector.
    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Self {
            rows: 1,
            cols,
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::row_vector(vec![value])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// The value of a 1×1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// `out[r] = W · x[r] + b` for a weight of shape `[out_dim, in_dim]`.
///
/// Rows of `x` that are mostly zero (one-hot observations) take a sparse path;
/// both paths accumulate in ascending input index so results are bitwise
/// identical whichever path runs.
pub(crate) fn affine_forward(x: &Matrix, weight: &[f64], bias: &[f64], out_dim: usize) -> Matrix {
    let in_dim = x.cols();
    debug_assert_eq!(weight.len(), out_dim * in_dim);
    debug_assert_eq!(bias.len(), out_dim);
    let mut out = Matrix::zeros(x.rows(), out_dim);
    let mut nz: Vec<usize> = Vec::with_capacity(in_dim);
    for r in 0..x.rows() {
        let xr = x.row(r);
        nz.clear();
        nz.extend(xr.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i));
        let yr = out.row_mut(r);
        if nz.len() * 4 < in_dim {
            for (o, y) in yr.iter_mut().enumerate() {
                let wrow = &weight[o * in_dim..(o + 1) * in_dim];
                let mut acc = 0.0;
                for &i in &nz {
                    acc += wrow[i] * xr[i];
                }
                *y = acc + bias[o];
            }
        } else {
            for (o, y) in yr.iter_mut().enumerate() {
                let wrow = &weight[o * in_dim..(o + 1) * in_dim];
                let mut acc = 0.0;
                for (w, v) in wrow.iter().zip(xr) {
                    if *v != 0.0 {
                        acc += w * v;
                    }
                }
                *y = acc + bias[o];
            }
        }
    }
    out
}

/// Accumulates `dW += δᵀ x`, `db += Σ δ` and optionally returns `dx = δ W`.
pub(crate) fn affine_backward(
    x: &Matrix,
    weight: &[f64],
    delta: &Matrix,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_dx: bool,
) -> Option<Matrix> {
    let in_dim = x.cols();
    let out_dim = delta.cols();
    let mut dx = want_dx.then(|| Matrix::zeros(x.rows(), in_dim));
    let mut nz: Vec<usize> = Vec::with_capacity(in_dim);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let dr = delta.row(r);
        nz.clear();
        nz.extend(xr.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i));
        let sparse = nz.len() * 4 < in_dim;
        for (o, &d) in dr.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad_bias[o] += d;
            let gw = &mut grad_weight[o * in_dim..(o + 1) * in_dim];
            if sparse {
                for &i in &nz {
                    gw[i] += d * xr[i];
                }
            } else {
                for (g, v) in gw.iter_mut().zip(xr) {
                    *g += d * v;
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxr = dx.row_mut(r);
            for (o, &d) in dr.iter().enumerate().take(out_dim) {
                if d == 0.0 {
                    continue;
                }
                let wrow = &weight[o * in_dim..(o + 1) * in_dim];
                for (g, w) in dxr.iter_mut().zip(wrow) {
                    *g += d * w;
                }
            }
        }
    }
    dx
}

pub(crate) fn relu_forward(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_row_matches_hand_sum() {
        let in_dim = 40;
        let weight: Vec<f64> = (0..3 * in_dim).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.13).collect();
        let bias = vec![0.1, -0.2, 0.3];
        let mut sparse = Matrix::zeros(1, in_dim);
        sparse.set(0, 3, 1.0);
        sparse.set(0, 17, 1.0);
        let ys = affine_forward(&sparse, &weight, &bias, 3);
        for o in 0..3 {
            let expect = weight[o * in_dim + 3] + weight[o * in_dim + 17] + bias[o];
            assert_eq!(ys.get(0, o), expect);
        }
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }
}
