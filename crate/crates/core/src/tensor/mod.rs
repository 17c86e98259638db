//! Dense row-major tensors and the reverse-mode tape that differentiates them.

pub mod flops;
pub(crate) mod kernels;
mod tape;

pub use tape::{Tape, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array stored contiguously in row-major order.
///
/// A tensor with an empty shape is a scalar holding one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor", format!("shape {shape:?} needs {expected} elements, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor { shape, data: (0..n).map(&mut f).collect() }
    }

    /// Builds a matrix from equal-length rows of `f64` literals.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("from_rows", "ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::of(v))).collect();
        Self::new([rows.len(), cols], data)
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Length of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when the tensor is viewed as `[rows, last_dim]`.
    pub fn rows(&self) -> usize {
        self.numel().checked_div(self.last_dim()).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.last_dim();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.last_dim() + j]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Sum of squares, accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Matrix view check: exactly two axes.
    pub(crate) fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::dim(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// Reorders rows: output row `i` is input row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        let rows = self.rows();
        if perm.len() != rows {
            return Err(Error::dim("permute_rows", format!("permutation of length {} for {rows} rows", perm.len())));
        }
        let c = self.last_dim();
        let mut data = Vec::with_capacity(self.numel());
        for &p in perm {
            if p >= rows {
                return Err(Error::dim("permute_rows", format!("index {p} out of range")));
            }
            data.extend_from_slice(&self.data[p * c..(p + 1) * c]);
        }
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.expect_matrix("slice_rows")?;
        if start > end || end > r {
            return Err(Error::dim("slice_rows", format!("{start}..{end} of {r} rows")));
        }
        Self::new([end - start, c], self.data[start * c..end * c].to_vec())
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        let (r, c) = self.expect_matrix("slice_cols")?;
        if start + len > c {
            return Err(Error::dim("slice_cols", format!("{start}+{len} of {c} columns")));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        Self::new([r, len], data)
    }

    /// Concatenates matrices along the channel axis.
    pub fn concat_cols(parts: &[&Tensor<T>]) -> Result<Self> {
        let rows = match parts.first() {
            Some(p) => p.expect_matrix("concat_cols")?.0,
            None => return Err(Error::dim("concat_cols", "no inputs")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.expect_matrix("concat_cols")?;
            if r != rows {
                return Err(Error::dim("concat_cols", format!("row counts {rows} and {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Self::new([rows, total], data)
    }

    /// Stacks matrices along the index axis.
    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Self> {
        let cols = match parts.first() {
            Some(p) => p.expect_matrix("concat_rows")?.1,
            None => return Err(Error::dim("concat_rows", "no inputs")),
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, c) = p.expect_matrix("concat_rows")?;
            if c != cols {
                return Err(Error::dim("concat_rows", format!("channel counts {cols} and {c}")));
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Self::new([rows, cols], data)
    }

    /// Plain matrix product without recording; shares the tape's kernel.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        let (p, q) = self.expect_matrix("matmul")?;
        let (q2, r) = other.expect_matrix("matmul")?;
        if q != q2 {
            return Err(Error::dim("matmul", format!("inner axes {q} and {q2}")));
        }
        let mut out = vec![T::zero(); p * r];
        kernels::matmul(&self.data, &other.data, &mut out, p, q, r);
        Self::new([p, r], out)
    }

    /// Plain transpose of a matrix.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.expect_matrix("transpose")?;
        let mut out = vec![T::zero(); r * c];
        kernels::transpose(&self.data, &mut out, r, c);
        Self::new([c, r], out)
    }
}

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
