//! Dense row-major `f64` matrices with an explicit floating-point operation tally.
//!
//! Every kernel that does arithmetic takes a [`FlopTrace`] so certificate costs are
//! measured from the operations actually executed rather than estimated afterwards.

mod svd;

pub use svd::{factored_top_svd, svd, Svd};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Running count of floating-point operations.
///
/// Conventions: a multiply-add is 2, and add, subtract, compare, multiply,
/// divide, `exp` and `ln` are 1 each.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlopTrace {
    total: u64,
}

impl FlopTrace {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, flops: u64) {
        self.total += flops;
    }

    pub fn merge(&mut self, other: FlopTrace) {
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |r, c| u[r] * v[c])
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
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Column means, i.e. the average row.
    pub fn col_means(&self, trace: &mut FlopTrace) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, x) in out.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        let n = self.rows.max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        trace.add((self.rows * self.cols + self.cols) as u64);
        out
    }

    pub fn scale(&self, s: f64, trace: &mut FlopTrace) -> Self {
        trace.add(self.data.len() as u64);
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix, trace: &mut FlopTrace) -> Result<Self> {
        self.zip_with(other, "add", trace, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix, trace: &mut FlopTrace) -> Result<Self> {
        self.zip_with(other, "sub", trace, |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        trace: &mut FlopTrace,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        trace.add(self.data.len() as u64);
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Adds `v` to every row.
    pub fn add_row_broadcast(&self, v: &[f64], trace: &mut FlopTrace) -> Result<Self> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                left: self.shape(),
                right: (1, v.len()),
            });
        }
        trace.add(self.data.len() as u64);
        Ok(Self::from_fn(self.rows, self.cols, |r, c| self[(r, c)] + v[c]))
    }

    /// `self · other`, costing `2·m·k·n`.
    pub fn matmul(&self, other: &Matrix, trace: &mut FlopTrace) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        for i in 0..m {
            let a = self.row(i);
            let o = &mut out.data[i * n..(i + 1) * n];
            for (p, &a_ip) in a.iter().enumerate() {
                if a_ip == 0.0 {
                    continue;
                }
                for (o_j, b_pj) in o.iter_mut().zip(other.row(p)) {
                    *o_j += a_ip * b_pj;
                }
            }
        }
        trace.add(2 * (m * k * n) as u64);
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix, trace: &mut FlopTrace) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_t",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let out = Self::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)));
        trace.add(2 * (self.rows * self.cols * other.rows) as u64);
        Ok(out)
    }

    /// Row vector times matrix: `v · self`.
    pub fn vec_mul(&self, v: &[f64], trace: &mut FlopTrace) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::ShapeMismatch {
                op: "vec_mul",
                left: (1, v.len()),
                right: self.shape(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (p, &x) in v.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.row(p)) {
                *o += x * b;
            }
        }
        trace.add(2 * (self.rows * self.cols) as u64);
        Ok(out)
    }

    /// Matrix times column vector: `self · v`.
    pub fn mul_vec(&self, v: &[f64], trace: &mut FlopTrace) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch {
                op: "mul_vec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        trace.add(2 * (self.rows * self.cols) as u64);
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// In-place numerically stable softmax of a vector. Costs `5·len`.
pub fn softmax_in_place(x: &mut [f64], trace: &mut FlopTrace) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
    trace.add(5 * x.len() as u64);
}

/// Row-wise softmax with a causal mask: row `i` attends to columns `0..=i`.
/// Masked entries are exactly zero.
pub fn masked_softmax(scores: &Matrix, trace: &mut FlopTrace) -> Result<Matrix> {
    if scores.rows() != scores.cols() {
        return Err(Error::ShapeMismatch {
            op: "masked_softmax",
            left: scores.shape(),
            right: scores.shape(),
        });
    }
    let n = scores.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let visible = &scores.row(i)[..=i];
        if visible.iter().all(|&x| x == f64::NEG_INFINITY) {
            return Err(Error::NonFinite(format!("attention row {i} is fully masked")));
        }
        let row = &mut out.row_mut(i)[..=i];
        row.copy_from_slice(visible);
        softmax_in_place(row, trace);
    }
    Ok(out)
}

/// Per-row `max − min`.
pub fn row_diff_range(m: &Matrix, trace: &mut FlopTrace) -> Vec<f64> {
    trace.add((m.rows() * (2 * m.cols().saturating_sub(1) + 1)) as u64);
    (0..m.rows()).map(|r| range(m.row(r))).collect()
}

/// `max − min` of a slice, zero when empty.
pub fn range(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    hi - lo
}
