//! CSR sparse and small dense kernels for the layer forward/backward pass.
//!
//! A layer weight matrix `W` is stored with output neurons as CSR rows, so
//! the forward product streams rows; the transpose apply reuses the same CSR
//! with scattered accumulation instead of keeping a CSC copy. Dense matrices
//! are row-major `rows x cols`, used here as feature-by-batch blocks so each
//! feature row is contiguous over the batch.

use crate::error::{Error, Result};
use crate::topology::SparsityPattern;

/// Row-major dense matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the given columns into a new matrix (batch gather).
    pub fn select_cols(&self, indices: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, indices.len());
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = out.row_mut(r);
            for (k, &c) in indices.iter().enumerate() {
                dst[k] = src[c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A sparsity pattern with one value per edge. For a layer mapping `n_in`
/// features to `n_out` units the pattern has `n_out` CSR rows of `n_in`
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pattern: SparsityPattern,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(pattern: SparsityPattern, values: Vec<f64>) -> Result<Self> {
        if values.len() as u64 != pattern.n_edges() {
            return Err(Error::Shape(format!(
                "{} values for {} edges",
                values.len(),
                pattern.n_edges()
            )));
        }
        Ok(SparseMatrix { pattern, values })
    }

    /// Output-unit count (CSR row count).
    pub fn out_dim(&self) -> usize {
        self.pattern.n_in() as usize
    }

    /// Input-feature count (CSR column range).
    pub fn in_dim(&self) -> usize {
        self.pattern.n_out() as usize
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// `Y = W X`: `Y[i, b] = sum_{j in row i} W[i, j] * X[j, b]`.
pub fn spmm(w: &SparseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.rows() != w.in_dim() {
        return Err(Error::Shape(format!(
            "spmm: W is {}x{}, X has {} rows",
            w.out_dim(),
            w.in_dim(),
            x.rows()
        )));
    }
    let batch = x.cols();
    let mut y = DenseMatrix::zeros(w.out_dim(), batch);
    let offsets = w.pattern.row_offsets();
    let cols = w.pattern.col_indices();
    for i in 0..w.out_dim() {
        let yrow = y.row_mut(i);
        for e in offsets[i] as usize..offsets[i + 1] as usize {
            let v = w.values[e];
            let xrow = x.row(cols[e] as usize);
            for b in 0..batch {
                yrow[b] += v * xrow[b];
            }
        }
    }
    Ok(y)
}

/// `out = W^T G`: `out[j, b] = sum_{i : (i,j) in pattern} W[i, j] * G[i, b]`.
pub fn spmm_transpose(w: &SparseMatrix, g: &DenseMatrix) -> Result<DenseMatrix> {
    if g.rows() != w.out_dim() {
        return Err(Error::Shape(format!(
            "spmm_transpose: W is {}x{}, G has {} rows",
            w.out_dim(),
            w.in_dim(),
            g.rows()
        )));
    }
    let batch = g.cols();
    let mut out = DenseMatrix::zeros(w.in_dim(), batch);
    let offsets = w.pattern.row_offsets();
    let cols = w.pattern.col_indices();
    for i in 0..w.out_dim() {
        let grow = g.row(i);
        for e in offsets[i] as usize..offsets[i + 1] as usize {
            let v = w.values[e];
            let orow = out.row_mut(cols[e] as usize);
            for b in 0..batch {
                orow[b] += v * grow[b];
            }
        }
    }
    Ok(out)
}

/// Sampled dense-dense product: for each pattern edge `(i, j)` returns
/// `sum_b G[i, b] * X[j, b]`. Only pattern positions are computed; this is
/// the weight gradient restricted to the static topology.
pub fn sddmm(g: &DenseMatrix, x: &DenseMatrix, pattern: &SparsityPattern) -> Result<Vec<f64>> {
    if g.rows() != pattern.n_in() as usize || x.rows() != pattern.n_out() as usize {
        return Err(Error::Shape(format!(
            "sddmm: pattern {}x{}, G has {} rows, X has {} rows",
            pattern.n_in(),
            pattern.n_out(),
            g.rows(),
            x.rows()
        )));
    }
    if g.cols() != x.cols() {
        return Err(Error::Shape(format!(
            "sddmm: batch {} vs {}",
            g.cols(),
            x.cols()
        )));
    }
    let offsets = pattern.row_offsets();
    let cols = pattern.col_indices();
    let mut values = vec![0.0; pattern.n_edges() as usize];
    for i in 0..pattern.n_in() as usize {
        let grow = g.row(i);
        for e in offsets[i] as usize..offsets[i + 1] as usize {
            let xrow = x.row(cols[e] as usize);
            let mut acc = 0.0;
            for b in 0..grow.len() {
                acc += grow[b] * xrow[b];
            }
            values[e] = acc;
        }
    }
    Ok(values)
}

/// Dense `C = A B`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul: {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut c = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (k, &av) in arow.iter().enumerate() {
            let brow = b.row(k);
            for j in 0..brow.len() {
                crow[j] += av * brow[j];
            }
        }
    }
    Ok(c)
}

/// Dense `C = A^T B`.
pub fn matmul_at(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul_at: {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut c = DenseMatrix::zeros(a.cols(), b.cols());
    for k in 0..a.rows() {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &av) in arow.iter().enumerate() {
            let crow = c.row_mut(i);
            for j in 0..brow.len() {
                crow[j] += av * brow[j];
            }
        }
    }
    Ok(c)
}

/// Dense `C = A B^T`.
pub fn matmul_bt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "matmul_bt: {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut c = DenseMatrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for j in 0..b.rows() {
            let brow = b.row(j);
            let mut acc = 0.0;
            for k in 0..arow.len() {
                acc += arow[k] * brow[k];
            }
            crow[j] = acc;
        }
    }
    Ok(c)
}
