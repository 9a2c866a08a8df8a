use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix stored column-major with `f64` elements.
///
/// Element `(i, j)` lives at `data[j * rows + i]`. Constructors reject
/// non-finite elements. Empty shapes (zero rows or columns) are permitted so
/// that knowledge sets and edit histories with no columns can be represented
/// without a special case.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        check_finite(diag, "diagonal")?;
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        Ok(m)
    }

    /// Builds a matrix from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension(
                "from_col_major",
                format!("{} elements", rows * cols),
                format!("{} elements", data.len()),
            ));
        }
        check_finite(&data, "matrix data")?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of rows, the natural way to write literals.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != ncols {
                return Err(Error::dimension(
                    "from_rows",
                    format!("{ncols} columns"),
                    format!("{} columns in row {i}", row.len()),
                ));
            }
            check_finite(row, "matrix data")?;
            for (j, &v) in row.iter().enumerate() {
                m.data[j * nrows + i] = v;
            }
        }
        Ok(m)
    }

    /// Builds a matrix by evaluating `f(i, j)`; panics if `f` yields a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                let v = f(i, j);
                assert!(
                    v.is_finite(),
                    "from_fn produced non-finite value at ({i}, {j})"
                );
                data.push(v);
            }
        }
        Self { rows, cols, data }
    }

    /// Stacks column vectors side by side; all columns must share a length.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::dimension(
                    "from_columns",
                    format!("{rows} rows"),
                    format!("{} rows in column {j}", c.len()),
                ));
            }
            data.extend_from_slice(c);
        }
        Self::from_col_major(rows, columns.len(), data)
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[j * self.rows + i]
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    pub fn into_col_major(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Row `i` copied out as a vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.data[i * self.cols + j] = self.data[j * self.rows + i];
            }
        }
        t
    }

    /// Matrix product with dimension checking.
    pub fn try_matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::dimension(
                "matmul",
                format!("rhs with {} rows", self.cols),
                format!("{}x{}", rhs.rows, rhs.cols),
            ));
        }
        Ok(self.matmul_unchecked(rhs))
    }

    fn matmul_unchecked(&self, rhs: &DenseMatrix) -> DenseMatrix {
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = DenseMatrix::zeros(m, n);
        for j in 0..n {
            let out_col = &mut out.data[j * m..(j + 1) * m];
            for p in 0..k {
                let b = rhs.data[j * k + p];
                if b == 0.0 {
                    continue;
                }
                let a_col = &self.data[p * m..(p + 1) * m];
                for (o, &a) in out_col.iter_mut().zip(a_col) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T * rhs` without materializing the transpose.
    pub fn transpose_matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != rhs.rows {
            return Err(Error::dimension(
                "transpose_matmul",
                format!("rhs with {} rows", self.rows),
                format!("{}x{}", rhs.rows, rhs.cols),
            ));
        }
        let mut out = DenseMatrix::zeros(self.cols, rhs.cols);
        for j in 0..rhs.cols {
            let b = rhs.column(j);
            for i in 0..self.cols {
                out.data[j * self.cols + i] = dot(self.column(i), b);
            }
        }
        Ok(out)
    }

    /// Gram matrix `self * self^T`, exactly symmetric.
    pub fn gram(&self) -> DenseMatrix {
        let n = self.rows;
        let mut g = DenseMatrix::zeros(n, n);
        for c in 0..self.cols {
            let col = self.column(c);
            for (j, &cj) in col.iter().enumerate() {
                if cj == 0.0 {
                    continue;
                }
                for (gi, &ci) in g.data[j * n..=j * n + j].iter_mut().zip(col) {
                    *gi += ci * cj;
                }
            }
        }
        for j in 0..n {
            for i in (j + 1)..n {
                g.data[j * n + i] = g.data[i * n + j];
            }
        }
        g
    }

    pub fn try_add(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape("add", rhs)?;
        Ok(self.zip_with(rhs, |a, b| a + b))
    }

    pub fn try_sub(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape("sub", rhs)?;
        Ok(self.zip_with(rhs, |a, b| a - b))
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Column-wise concatenation `[self | rhs]`.
    pub fn hcat(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != rhs.rows {
            return Err(Error::dimension(
                "hcat",
                format!("{} rows", self.rows),
                format!("{} rows", rhs.rows),
            ));
        }
        let mut data = Vec::with_capacity(self.data.len() + rhs.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&rhs.data);
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols + rhs.cols,
            data,
        })
    }

    /// Keeps the listed columns, in order.
    pub fn select_columns(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.column(j));
        }
        DenseMatrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| self.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `||m - m^T||_F`; square matrices only.
    pub fn asymmetry(&self) -> f64 {
        debug_assert!(self.is_square());
        let n = self.rows;
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                let d = self.data[j * n + i] - self.data[i * n + j];
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    /// `(m + m^T) / 2`.
    pub fn symmetrized(&self) -> DenseMatrix {
        let n = self.rows;
        DenseMatrix::from_fn(n, n, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)))
    }

    fn zip_with(&self, rhs: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, rhs: &DenseMatrix) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::dimension(
                op,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", rhs.rows, rhs.cols),
            ));
        }
        Ok(())
    }
}

/// `sqrt(sum m_ij^2)`, accumulated with scaling so large entries cannot overflow.
pub fn frobenius_norm(m: &DenseMatrix) -> f64 {
    let scale = m.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    let ssq: f64 = m
        .data
        .iter()
        .map(|v| {
            let s = v / scale;
            s * s
        })
        .sum();
    scale * ssq.sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:>12.6e} ", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

// Operator impls panic on shape mismatch; public entry points validate shapes
// first and then use these internally.

impl Mul for &DenseMatrix {
    type Output = DenseMatrix;

    fn mul(self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        self.matmul_unchecked(rhs)
    }
}

impl Add for &DenseMatrix {
    type Output = DenseMatrix;

    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;

    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Neg for &DenseMatrix {
    type Output = DenseMatrix;

    fn neg(self) -> DenseMatrix {
        self.scale(-1.0)
    }
}
