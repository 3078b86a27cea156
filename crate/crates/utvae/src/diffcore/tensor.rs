//! Dense 2-D matrices of f64 in row-major order.
//!
//! Everything the models manipulate is one of these: covariate batches are
//! n x d, activations n x h, parameters d x h or 1 x h, per-sample
//! log-likelihoods n x 1, and scalars 1 x 1. Shape mismatches and domain
//! violations (log of a non-positive value, division by zero) panic: they
//! are programming errors in graph construction, not data conditions.

use std::fmt;

use super::scalar;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    // ---- construction ----

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length {} does not match shape {rows}x{cols}",
            data.len()
        );
        Tensor { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor { rows, cols, data }
    }

    /// n x 1 column vector from a slice.
    pub fn column(values: &[f64]) -> Self {
        Tensor { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    /// 1 x n row vector from a slice.
    pub fn row_vec(values: &[f64]) -> Self {
        Tensor { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    // ---- shape and element access ----

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds for {}x{}", self.rows, self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds for {}x{}", self.rows, self.cols);
        self.data[i * self.cols + j] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row {i} out of bounds for {} rows", self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The single element of a 1 x 1 tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() called on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    // ---- elementwise ----

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op}: shape mismatch {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor { rows: self.rows, cols: self.cols, data }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip(other, "subtract", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip(other, "multiply", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        assert!(other.data.iter().all(|&v| v != 0.0), "divide: zero denominator");
        self.zip(other, "divide", |a, b| a / b)
    }

    pub fn neg(&self) -> Tensor {
        self.map(|v| -v)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn offset(&self, c: f64) -> Tensor {
        self.map(|v| v + c)
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        assert!(self.data.iter().all(|&v| v > 0.0), "log of non-positive value");
        self.map(f64::ln)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(scalar::sigmoid)
    }

    pub fn softplus(&self) -> Tensor {
        self.map(scalar::softplus)
    }

    pub fn elu(&self) -> Tensor {
        self.map(scalar::elu)
    }

    pub fn square(&self) -> Tensor {
        self.map(|v| v * v)
    }

    // ---- linear algebra ----

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.cols, other.rows,
            "matmul: inner dimensions differ, {}x{} vs {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * m..(i + 1) * m];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &other.data[p * m..(p + 1) * m];
                for j in 0..m {
                    orow[j] += aip * brow[j];
                }
            }
        }
        Tensor { rows: n, cols: m, data: out }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    // ---- reductions ----

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        assert!(!self.is_empty(), "mean of an empty tensor");
        self.sum() / self.data.len() as f64
    }

    /// Sum across columns: n x c -> n x 1.
    pub fn row_sum(&self) -> Tensor {
        let data = (0..self.rows).map(|i| self.row(i).iter().sum()).collect();
        Tensor { rows: self.rows, cols: 1, data }
    }

    /// Sum across rows: n x c -> 1 x c.
    pub fn col_sum(&self) -> Tensor {
        let mut data = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                data[j] += v;
            }
        }
        Tensor { rows: 1, cols: self.cols, data }
    }

    // ---- structural ----

    /// Replicate a 1 x c row vector down to rows x c.
    pub fn broadcast_row(&self, rows: usize) -> Tensor {
        assert_eq!(self.rows, 1, "broadcast_row: expected a 1xc row vector, got {}x{}", self.rows, self.cols);
        let mut data = Vec::with_capacity(rows * self.cols);
        for _ in 0..rows {
            data.extend_from_slice(&self.data);
        }
        Tensor { rows, cols: self.cols, data }
    }

    /// Replicate an n x 1 column vector out to n x cols.
    pub fn broadcast_col(&self, cols: usize) -> Tensor {
        assert_eq!(self.cols, 1, "broadcast_col: expected an nx1 column vector, got {}x{}", self.rows, self.cols);
        let mut data = Vec::with_capacity(self.rows * cols);
        for &v in &self.data {
            data.extend(std::iter::repeat(v).take(cols));
        }
        Tensor { rows: self.rows, cols, data }
    }

    pub fn concat_cols(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.rows, other.rows,
            "concat_cols: row counts differ, {} vs {}",
            self.rows, other.rows
        );
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Tensor { rows: self.rows, cols, data }
    }

    /// Columns lo..hi as a new tensor.
    pub fn slice_cols(&self, lo: usize, hi: usize) -> Tensor {
        assert!(lo < hi && hi <= self.cols, "slice_cols: invalid range {lo}..{hi} for {} columns", self.cols);
        let cols = hi - lo;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[lo..hi]);
        }
        Tensor { rows: self.rows, cols, data }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}, [", self.rows, self.cols)?;
        for (i, v) in self.data.iter().take(8).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > 8 {
            write!(f, ", ...")?;
        }
        write!(f, "])")
    }
}
