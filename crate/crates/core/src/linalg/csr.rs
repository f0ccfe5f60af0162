use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DenseMatrix, MatrixRef};

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within each row. Stored values are
/// expected to be nonzero; constructors that start from dense data drop zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        };
        m.check_structure()?;
        Ok(m)
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Validates the structural invariants (row pointer shape, sorted in-bound columns).
    pub fn check_structure(&self) -> Result<()> {
        if self.row_ptr.len() != self.rows + 1 {
            return Err(Error::InvalidMatrix(format!(
                "row_ptr length {} for {} rows",
                self.row_ptr.len(),
                self.rows
            )));
        }
        if self.row_ptr[0] != 0 {
            return Err(Error::InvalidMatrix("row_ptr[0] != 0".into()));
        }
        if self.col_idx.len() != self.values.len() {
            return Err(Error::InvalidMatrix(format!(
                "col_idx length {} != values length {}",
                self.col_idx.len(),
                self.values.len()
            )));
        }
        if self.row_ptr[self.rows] != self.values.len() {
            return Err(Error::InvalidMatrix(format!(
                "row_ptr[rows] = {} but nnz = {}",
                self.row_ptr[self.rows],
                self.values.len()
            )));
        }
        for i in 0..self.rows {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            if s > e {
                return Err(Error::InvalidMatrix(format!("row_ptr decreases at row {i}")));
            }
            let cols = &self.col_idx[s..e];
            for (t, &c) in cols.iter().enumerate() {
                if c >= self.cols {
                    return Err(Error::InvalidMatrix(format!(
                        "column {c} out of range in row {i}"
                    )));
                }
                if t > 0 && cols[t - 1] >= c {
                    return Err(Error::InvalidMatrix(format!(
                        "columns not strictly increasing in row {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut row_ptr = Vec::with_capacity(d.rows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..d.rows() {
            for (j, &v) in d.row(i).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self {
            rows: d.rows(),
            cols: d.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed, zeros dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(i, j, _) in &triplets {
            if i >= rows || j >= cols {
                return Err(Error::InvalidMatrix(format!(
                    "entry ({i}, {j}) outside {rows}x{cols}"
                )));
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let m = Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        };
        Ok(m.drop_zeros())
    }

    fn drop_zeros(self) -> Self {
        if self.values.iter().all(|&v| v != 0.0) {
            return self;
        }
        let mut row_ptr = Vec::with_capacity(self.rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&c, &v) in c.iter().zip(v) {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            row_ptr,
            col_idx,
            values,
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    /// Stored entries of row `i` restricted to columns in `cols`.
    #[inline]
    pub fn row_window(&self, i: usize, cols: &Range<usize>) -> (&[usize], &[f64]) {
        let (c, v) = self.row(i);
        if cols.start == 0 && cols.end >= self.cols {
            return (c, v);
        }
        let lo = c.partition_point(|&x| x < cols.start);
        let hi = lo + c[lo..].partition_point(|&x| x < cols.end);
        (&c[lo..hi], &v[lo..hi])
    }

    /// Number of stored entries inside a window.
    pub fn nnz_in(&self, rows: &Range<usize>, cols: &Range<usize>) -> usize {
        rows.clone().map(|i| self.row_window(i, cols).0.len()).sum()
    }

    /// Bytes a materialized CSR with the given geometry occupies.
    pub fn storage_bytes(rows: usize, nnz: usize) -> u64 {
        ((rows + 1) * 8 + nnz * 16) as u64
    }

    pub fn nbytes(&self) -> u64 {
        Self::storage_bytes(self.rows, self.nnz())
    }

    pub fn as_ref(&self) -> MatrixRef<'_> {
        MatrixRef::sparse(self)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                d.set(i, j, x);
            }
        }
        d
    }

    /// Copy of a window, re-indexed to start at (0, 0).
    pub fn window_copy(&self, rows: Range<usize>, cols: Range<usize>) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in rows.clone() {
            let (c, v) = self.row_window(i, &cols);
            col_idx.extend(c.iter().map(|&x| x - cols.start));
            values.extend_from_slice(v);
            row_ptr.push(values.len());
        }
        CsrMatrix {
            rows: rows.len(),
            cols: cols.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                let p = next[j];
                col_idx[p] = i;
                values[p] = x;
                next[j] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }
}
