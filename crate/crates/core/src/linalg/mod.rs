//! Dense and CSR matrix types, windowed views, and the kernels used by the
//! multiplicative updates.
//!
//! Every kernel sums in ascending inner-index order per output element, so
//! results are bit-reproducible and accumulating over consecutive batches
//! gives exactly the same bits as one unbatched call.

mod csr;
mod dense;
pub mod io;
mod kernels;

use std::ops::Range;

pub use csr::CsrMatrix;
pub use dense::DenseMatrix;
pub use kernels::{
    accumulate_gram, accumulate_product, accumulate_residual, accumulate_sum_squares,
    accumulate_transpose_product, frobenius_norm, gram_t, hadamard_update, matmul,
    relative_error, relative_error_blocked, validate_nonnegative, DEFAULT_RESIDUAL_BLOCK_BYTES,
};

use crate::error::{Error, Result};

/// Default epsilon added to multiplicative-update denominators.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Owned matrix of either storage kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

impl Matrix {
    pub fn as_ref(&self) -> MatrixRef<'_> {
        match self {
            Matrix::Dense(d) => d.as_ref(),
            Matrix::Sparse(s) => s.as_ref(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Matrix::Dense(d) => d.shape(),
            Matrix::Sparse(s) => s.shape(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Matrix::Sparse(_))
    }

    pub fn nbytes(&self) -> u64 {
        match self {
            Matrix::Dense(d) => d.nbytes(),
            Matrix::Sparse(s) => s.nbytes(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            Matrix::Dense(d) => d.clone(),
            Matrix::Sparse(s) => s.to_dense(),
        }
    }

    /// Fraction of stored entries; 1.0 for dense storage.
    pub fn density(&self) -> f64 {
        match self {
            Matrix::Dense(_) => 1.0,
            Matrix::Sparse(s) => {
                let cells = (s.rows() * s.cols()).max(1) as f64;
                s.nnz() as f64 / cells
            }
        }
    }

    pub fn transpose(&self) -> Matrix {
        match self {
            Matrix::Dense(d) => Matrix::Dense(d.transpose()),
            Matrix::Sparse(s) => Matrix::Sparse(s.transpose()),
        }
    }
}

impl From<DenseMatrix> for Matrix {
    fn from(d: DenseMatrix) -> Self {
        Matrix::Dense(d)
    }
}

impl From<CsrMatrix> for Matrix {
    fn from(s: CsrMatrix) -> Self {
        Matrix::Sparse(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Storage<'a> {
    Dense(&'a DenseMatrix),
    Sparse(&'a CsrMatrix),
}

/// Zero-copy rectangular window (half-open ranges) over a dense or CSR matrix.
#[derive(Debug, Clone)]
pub struct MatrixRef<'a> {
    storage: Storage<'a>,
    rows: Range<usize>,
    cols: Range<usize>,
}

impl<'a> MatrixRef<'a> {
    pub fn dense(d: &'a DenseMatrix) -> Self {
        Self {
            storage: Storage::Dense(d),
            rows: 0..d.rows(),
            cols: 0..d.cols(),
        }
    }

    pub fn sparse(s: &'a CsrMatrix) -> Self {
        Self {
            storage: Storage::Sparse(s),
            rows: 0..s.rows(),
            cols: 0..s.cols(),
        }
    }

    /// Sub-window, with ranges relative to this view.
    pub fn window(&self, rows: Range<usize>, cols: Range<usize>) -> Result<MatrixRef<'a>> {
        if rows.start > rows.end
            || cols.start > cols.end
            || rows.end > self.nrows()
            || cols.end > self.ncols()
        {
            return Err(Error::WindowOutOfBounds {
                rows,
                cols,
                shape_rows: self.nrows(),
                shape_cols: self.ncols(),
            });
        }
        Ok(Self {
            storage: self.storage,
            rows: self.rows.start + rows.start..self.rows.start + rows.end,
            cols: self.cols.start + cols.start..self.cols.start + cols.end,
        })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    pub fn storage(&self) -> Storage<'a> {
        self.storage
    }

    /// Row range in the underlying matrix.
    pub fn row_range(&self) -> Range<usize> {
        self.rows.clone()
    }

    /// Column range in the underlying matrix.
    pub fn col_range(&self) -> Range<usize> {
        self.cols.clone()
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    /// Entry at window-local `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (gi, gj) = (self.rows.start + i, self.cols.start + j);
        match self.storage {
            Storage::Dense(d) => d.get(gi, gj),
            Storage::Sparse(s) => {
                let (c, v) = s.row(gi);
                c.binary_search(&gj).map_or(0.0, |p| v[p])
            }
        }
    }

    /// Calls `f(local_col, value)` for each entry of local row `i`: every
    /// column for dense storage, stored entries only for CSR.
    #[inline]
    pub fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        let gi = self.rows.start + i;
        match self.storage {
            Storage::Dense(d) => {
                for (j, &v) in d.row(gi)[self.cols.clone()].iter().enumerate() {
                    f(j, v);
                }
            }
            Storage::Sparse(s) => {
                let (c, v) = s.row_window(gi, &self.cols);
                for (&j, &x) in c.iter().zip(v) {
                    f(j - self.cols.start, x);
                }
            }
        }
    }

    /// Stored entry count: all cells for dense, stored nonzeros for CSR.
    pub fn stored(&self) -> usize {
        match self.storage {
            Storage::Dense(_) => self.nrows() * self.ncols(),
            Storage::Sparse(s) => s.nnz_in(&self.rows, &self.cols),
        }
    }

    /// Bytes the window would occupy if materialized in its own storage kind.
    pub fn window_bytes(&self) -> u64 {
        match self.storage {
            Storage::Dense(_) => (self.nrows() * self.ncols() * 8) as u64,
            Storage::Sparse(_) => CsrMatrix::storage_bytes(self.nrows(), self.stored()),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.nrows(), self.ncols());
        for i in 0..self.nrows() {
            let row = out.row_mut(i);
            self.for_each_in_row(i, |j, v| row[j] = v);
        }
        out
    }

    /// Materializes the window with the same storage kind.
    pub fn to_owned_matrix(&self) -> Matrix {
        match self.storage {
            Storage::Dense(_) => Matrix::Dense(self.to_dense()),
            Storage::Sparse(s) => Matrix::Sparse(s.window_copy(self.rows.clone(), self.cols.clone())),
        }
    }
}
