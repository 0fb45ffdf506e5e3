//! Sparse matrix storage: coordinate triplets plus compressed column/row forms.
//!
//! Symmetric matrices (cost Hessians, KKT systems) store the upper triangle
//! only; `sym_matvec` applies the implicit lower part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate-triplet sparse matrix. Duplicate entries are summed on
/// compression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CooMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        CooMatrix {
            nrows,
            ncols,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.vals.len() || self.cols.len() != self.vals.len() {
            return Err(Error::Dimension("triplet arrays have unequal length".into()));
        }
        for (&r, &c) in self.rows.iter().zip(&self.cols) {
            if r >= self.nrows || c >= self.ncols {
                return Err(Error::Dimension(format!(
                    "triplet ({r}, {c}) outside {}x{}",
                    self.nrows, self.ncols
                )));
            }
        }
        if self.vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sparse matrix entry".into()));
        }
        Ok(())
    }

    /// Compress to CSC, summing duplicates. Structural zeros are kept.
    pub fn to_csc(&self) -> CscMatrix {
        let mut order: Vec<usize> = (0..self.nnz()).collect();
        order.sort_unstable_by_key(|&k| (self.cols[k], self.rows[k]));
        let mut colptr = vec![0usize; self.ncols + 1];
        let mut rowidx = Vec::with_capacity(self.nnz());
        let mut vals = Vec::with_capacity(self.nnz());
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c, v) = (self.rows[k], self.cols[k], self.vals[k]);
            if last == Some((c, r)) {
                *vals.last_mut().unwrap() += v;
            } else {
                rowidx.push(r);
                vals.push(v);
                colptr[c + 1] = rowidx.len();
                last = Some((c, r));
            }
        }
        for c in 0..self.ncols {
            colptr[c + 1] = colptr[c + 1].max(colptr[c]);
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            colptr,
            rowidx,
            vals,
        }
    }

    /// Compress to CSR, summing duplicates.
    pub fn to_csr(&self) -> CsrMatrix {
        let mut order: Vec<usize> = (0..self.nnz()).collect();
        order.sort_unstable_by_key(|&k| (self.rows[k], self.cols[k]));
        let mut rowptr = vec![0usize; self.nrows + 1];
        let mut colidx = Vec::with_capacity(self.nnz());
        let mut vals = Vec::with_capacity(self.nnz());
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c, v) = (self.rows[k], self.cols[k], self.vals[k]);
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                colidx.push(c);
                vals.push(v);
                rowptr[r + 1] = colidx.len();
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            rowptr[r + 1] = rowptr[r + 1].max(rowptr[r]);
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            rowptr,
            colidx,
            vals,
        }
    }
}

/// Compressed sparse column matrix with sorted row indices per column.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CscMatrix {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowidx: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.colptr[j], self.colptr[j + 1]);
        (&self.rowidx[a..b], &self.vals[a..b])
    }

    /// y += A x for a general (not symmetric-compressed) matrix.
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let (idx, vals) = self.col(j);
            for (&i, &v) in idx.iter().zip(vals) {
                y[i] += v * xj;
            }
        }
    }

    /// y += A^T B-style symmetric product where `self` stores the upper
    /// triangle of a symmetric matrix.
    pub fn sym_matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(self.nrows, self.ncols);
        for j in 0..self.ncols {
            let (idx, vals) = self.col(j);
            let xj = x[j];
            for (&i, &v) in idx.iter().zip(vals) {
                debug_assert!(i <= j, "upper-triangle storage violated");
                y[i] += v * xj;
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
    }

    /// x^T A x for symmetric upper-triangle storage.
    pub fn sym_quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.ncols {
            let (idx, vals) = self.col(j);
            let xj = x[j];
            for (&i, &v) in idx.iter().zip(vals) {
                if i == j {
                    acc += v * xj * xj;
                } else {
                    acc += 2.0 * v * x[i] * xj;
                }
            }
        }
        acc
    }

    pub fn to_coo(&self) -> CooMatrix {
        let mut coo = CooMatrix::new(self.nrows, self.ncols);
        for j in 0..self.ncols {
            let (idx, vals) = self.col(j);
            for (&i, &v) in idx.iter().zip(vals) {
                coo.push(i, j, v);
            }
        }
        coo
    }
}

/// Compressed sparse row matrix; the natural layout for constraint rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub rowptr: Vec<usize>,
    pub colidx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.rowptr[i], self.rowptr[i + 1]);
        (&self.colidx[a..b], &self.vals[a..b])
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (idx, vals) = self.row(i);
        idx.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            y[i] = self.row_dot(i, x);
        }
    }
}

/// Dense dot product with four-way accumulation so LLVM can vectorize the
/// reduction.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut rest = 0.0;
    for i in 4 * chunks..a.len() {
        rest += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + rest
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coo_to_csc_sums_duplicates() {
        let mut coo = CooMatrix::new(3, 3);
        coo.push(0, 0, 1.0);
        coo.push(2, 1, 3.0);
        coo.push(0, 0, 2.0);
        coo.push(1, 2, -1.0);
        let csc = coo.to_csc();
        assert_eq!(csc.colptr, vec![0, 1, 2, 3]);
        assert_eq!(csc.rowidx, vec![0, 2, 1]);
        assert_eq!(csc.vals, vec![3.0, 3.0, -1.0]);
    }

    #[test]
    fn coo_to_csr_roundtrip_matvec() {
        let mut coo = CooMatrix::new(2, 3);
        coo.push(0, 0, 1.0);
        coo.push(0, 2, 2.0);
        coo.push(1, 1, -4.0);
        let csr = coo.to_csr();
        let mut y = vec![0.0; 2];
        csr.matvec(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, vec![7.0, -8.0]);
    }

    #[test]
    fn sym_matvec_applies_lower_part() {
        // [[2, 1], [1, 3]] stored as upper triangle
        let mut coo = CooMatrix::new(2, 2);
        coo.push(0, 0, 2.0);
        coo.push(0, 1, 1.0);
        coo.push(1, 1, 3.0);
        let m = coo.to_csc();
        let mut y = vec![0.0; 2];
        m.sym_matvec_acc(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.0, 4.0]);
        assert!((m.sym_quad_form(&[1.0, 2.0]) - (2.0 + 4.0 + 12.0)).abs() < 1e-14);
    }

    #[test]
    fn empty_columns_get_valid_pointers() {
        let coo = CooMatrix::new(4, 4);
        let csc = coo.to_csc();
        assert_eq!(csc.colptr, vec![0, 0, 0, 0, 0]);
    }
}
