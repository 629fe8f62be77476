//! Column-sparse dataset storage.
//!
//! Data points are the columns of a `d x n` matrix. Entries are kept in
//! compressed-column form with a compressed-row mirror, since the samplers
//! walk rows (`X[i, :]`) while the sketches consume columns.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sparse vector in `R^dim` with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds a vector from `(index, value)` pairs. Zero values are dropped;
    /// duplicate indices are rejected.
    pub fn new(dim: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_by_key(|&(i, _)| i);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::invalid(format!("duplicate index {}", w[0].0)));
            }
        }
        for &(i, v) in &entries {
            if i >= dim {
                return Err(Error::invalid(format!("index {i} out of range for dimension {dim}")));
            }
            if !v.is_finite() {
                return Err(Error::invalid(format!("non-finite value at index {i}")));
            }
        }
        let (indices, values) = entries.into_iter().unzip();
        Ok(SparseVector { dim, indices, values })
    }

    pub fn from_dense(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), values.iter().copied().enumerate().collect())
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        match self.indices.binary_search(&i) {
            Ok(p) => self.values[p],
            Err(_) => 0.0,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        sparse_dot(&self.indices, &self.values, &other.indices, &other.values)
    }
}

pub(crate) fn sparse_dot(ia: &[usize], va: &[f64], ib: &[usize], vb: &[f64]) -> f64 {
    let (mut p, mut q, mut acc) = (0, 0, 0.0);
    while p < ia.len() && q < ib.len() {
        match ia[p].cmp(&ib[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                acc += va[p] * vb[q];
                p += 1;
                q += 1;
            }
        }
    }
    acc
}

/// The `d x n` dataset matrix `X`, one data point per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDataMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    col_values: Vec<f64>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    row_values: Vec<f64>,
}

impl SparseDataMatrix {
    /// Builds the matrix from per-column `(row, value)` lists.
    pub fn from_columns(n_rows: usize, columns: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if n_rows == 0 || columns.is_empty() {
            return Err(Error::invalid("dataset must have at least one row and one column"));
        }
        let vectors = columns
            .into_iter()
            .map(|c| SparseVector::new(n_rows, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_sparse_columns(n_rows, &vectors))
    }

    /// Builds the matrix from already-validated sparse columns.
    pub fn from_vectors(columns: &[SparseVector]) -> Result<Self> {
        let n_rows = columns.first().map(|c| c.dim()).unwrap_or(0);
        if n_rows == 0 {
            return Err(Error::invalid("dataset must have at least one row and one column"));
        }
        if columns.iter().any(|c| c.dim() != n_rows) {
            return Err(Error::invalid("columns have inconsistent dimensions"));
        }
        Ok(Self::from_sparse_columns(n_rows, columns))
    }

    fn from_sparse_columns(n_rows: usize, columns: &[SparseVector]) -> Self {
        let n_cols = columns.len();
        let mut col_ptr = Vec::with_capacity(n_cols + 1);
        let mut row_idx = Vec::new();
        let mut col_values = Vec::new();
        col_ptr.push(0);
        for c in columns {
            row_idx.extend_from_slice(c.indices());
            col_values.extend_from_slice(c.values());
            col_ptr.push(row_idx.len());
        }

        let mut counts = vec![0usize; n_rows + 1];
        for &r in &row_idx {
            counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; row_idx.len()];
        let mut row_values = vec![0.0; row_idx.len()];
        for c in 0..n_cols {
            for p in col_ptr[c]..col_ptr[c + 1] {
                let r = row_idx[p];
                col_idx[next[r]] = c;
                row_values[next[r]] = col_values[p];
                next[r] += 1;
            }
        }

        SparseDataMatrix {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            col_values,
            row_ptr,
            col_idx,
            row_values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let columns = (0..m.ncols())
            .map(|c| (0..m.nrows()).map(|r| (r, m[(r, c)])).collect::<Vec<_>>())
            .collect();
        Self::from_columns(m.nrows(), columns)
    }

    /// `d`, the ambient dimension.
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// `n`, the number of data points.
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Row indices and values of column `c`.
    pub fn column(&self, c: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[c]..self.col_ptr[c + 1];
        (&self.row_idx[r.clone()], &self.col_values[r])
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.row_values[r])
    }

    pub fn column_vector(&self, c: usize) -> SparseVector {
        let (idx, val) = self.column(c);
        SparseVector {
            dim: self.n_rows,
            indices: idx.to_vec(),
            values: val.to_vec(),
        }
    }

    pub fn columns(&self) -> Vec<SparseVector> {
        (0..self.n_cols).map(|c| self.column_vector(c)).collect()
    }

    pub fn column_norms_sq(&self) -> Vec<f64> {
        (0..self.n_cols)
            .map(|c| self.column(c).1.iter().map(|v| v * v).sum())
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, val) = self.column(c);
        match idx.binary_search(&r) {
            Ok(p) => val[p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for c in 0..self.n_cols {
            let (idx, val) = self.column(c);
            for (&r, &v) in idx.iter().zip(val) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::invalid("column selection is empty"));
        }
        let vectors = cols
            .iter()
            .map(|&c| {
                if c >= self.n_cols {
                    Err(Error::invalid(format!("column {c} out of range")))
                } else {
                    Ok(self.column_vector(c))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_sparse_columns(self.n_rows, &vectors))
    }

    /// Returns a copy with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.col_values.iter_mut().for_each(|v| *v *= factor);
        out.row_values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// `<X[:, a], X[:, b]>`.
    pub fn column_dot(&self, a: usize, b: usize) -> f64 {
        let (ia, va) = self.column(a);
        let (ib, vb) = self.column(b);
        sparse_dot(ia, va, ib, vb)
    }
}
