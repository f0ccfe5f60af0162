use crate::error::{Error, Result};

use super::{DenseMatrix, MatrixRef, Storage};

/// Working-set size for one `WH` block when streaming the residual.
pub const DEFAULT_RESIDUAL_BLOCK_BYTES: u64 = 32 << 20;

/// `a @ b`, with CSR `a` dispatched to a row-wise kernel.
pub fn matmul(a: MatrixRef<'_>, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.ncols() != b.rows() {
        return Err(Error::mismatch("matmul", a.shape(), b.shape()));
    }
    let mut out = DenseMatrix::zeros(a.nrows(), b.cols());
    accumulate_product(&mut out, a, b)?;
    Ok(out)
}

/// `acc += a @ b`.
pub fn accumulate_product(acc: &mut DenseMatrix, a: MatrixRef<'_>, b: &DenseMatrix) -> Result<()> {
    if a.ncols() != b.rows() {
        return Err(Error::mismatch("matmul", a.shape(), b.shape()));
    }
    if acc.shape() != (a.nrows(), b.cols()) {
        return Err(Error::mismatch(
            "matmul accumulator",
            acc.shape(),
            (a.nrows(), b.cols()),
        ));
    }
    if let Storage::Dense(d) = a.storage() {
        dense_product(acc, d, a.row_range(), a.col_range().start, b);
        return Ok(());
    }
    for i in 0..a.nrows() {
        let out = acc.row_mut(i);
        a.for_each_in_row(i, |j, v| {
            for (o, &x) in out.iter_mut().zip(b.row(j)) {
                *o += v * x;
            }
        });
    }
    Ok(())
}

const LANES: usize = 8;
const ROWS: usize = 2;

/// Dense `acc += a[rows, c0..] @ b`, register-blocked over 2 output rows and
/// 8 output columns. Every output element still sums over j in ascending
/// order, so the result is bitwise that of the naive loop.
fn dense_product(acc: &mut DenseMatrix, d: &DenseMatrix, rows: std::ops::Range<usize>, c0: usize, b: &DenseMatrix) {
    let inner = b.rows();
    let k = b.cols();
    let n_rows = rows.len();
    let bd = b.data();
    let mut i = 0;
    while i < n_rows {
        let h = ROWS.min(n_rows - i);
        let a_rows: [&[f64]; ROWS] = std::array::from_fn(|r| {
            let gi = rows.start + i + r.min(h - 1);
            &d.row(gi)[c0..c0 + inner]
        });
        let mut c = 0;
        while c < k {
            let w = LANES.min(k - c);
            let mut t = [[0.0f64; LANES]; ROWS];
            for r in 0..h {
                t[r][..w].copy_from_slice(&acc.row(i + r)[c..c + w]);
            }
            if w == LANES && h == ROWS {
                for j in 0..inner {
                    let bj: &[f64; LANES] = bd[j * k + c..j * k + c + LANES].try_into().unwrap();
                    for r in 0..ROWS {
                        let v = a_rows[r][j];
                        for l in 0..LANES {
                            t[r][l] += v * bj[l];
                        }
                    }
                }
            } else {
                for j in 0..inner {
                    let bj = &bd[j * k + c..j * k + c + w];
                    for r in 0..h {
                        let v = a_rows[r][j];
                        for l in 0..w {
                            t[r][l] += v * bj[l];
                        }
                    }
                }
            }
            for r in 0..h {
                acc.row_mut(i + r)[c..c + w].copy_from_slice(&t[r][..w]);
            }
            c += w;
        }
        i += h;
    }
}

/// `acc += wᵀ @ a` without forming the transpose. Each `a[i, j]` scatters
/// `a[i, j] · w[i, :]` into column `j` of `acc`.
pub fn accumulate_transpose_product(
    acc: &mut DenseMatrix,
    w: &DenseMatrix,
    a: MatrixRef<'_>,
) -> Result<()> {
    if w.rows() != a.nrows() {
        return Err(Error::mismatch("transpose product", w.shape(), a.shape()));
    }
    let k = w.cols();
    let cols = a.ncols();
    if acc.shape() != (k, cols) {
        return Err(Error::mismatch(
            "transpose product accumulator",
            acc.shape(),
            (k, cols),
        ));
    }
    match a.storage() {
        Storage::Dense(d) => {
            // Four rows of A per pass over acc; each element still adds the
            // rows in ascending order.
            let c0 = a.col_range().start;
            let rows = a.row_range();
            let n_rows = rows.len();
            let mut li = 0;
            while li + 4 <= n_rows {
                let ar: [&[f64]; 4] = std::array::from_fn(|r| &d.row(rows.start + li + r)[c0..c0 + cols]);
                for c in 0..k {
                    let wc: [f64; 4] = std::array::from_fn(|r| w.get(li + r, c));
                    let out = acc.row_mut(c);
                    for (j, o) in out.iter_mut().enumerate() {
                        let mut t = *o;
                        t += wc[0] * ar[0][j];
                        t += wc[1] * ar[1][j];
                        t += wc[2] * ar[2][j];
                        t += wc[3] * ar[3][j];
                        *o = t;
                    }
                }
                li += 4;
            }
            for li in li..n_rows {
                let a_row = &d.row(rows.start + li)[c0..c0 + cols];
                let w_row = w.row(li);
                for (c, &wc) in w_row.iter().enumerate() {
                    let out = acc.row_mut(c);
                    for (o, &x) in out.iter_mut().zip(a_row) {
                        *o += wc * x;
                    }
                }
            }
        }
        Storage::Sparse(_) => {
            let data = acc.data_mut();
            for li in 0..a.nrows() {
                let w_row = w.row(li);
                a.for_each_in_row(li, |j, v| {
                    for (c, &wc) in w_row.iter().enumerate() {
                        data[c * cols + j] += wc * v;
                    }
                });
            }
        }
    }
    Ok(())
}

/// `acc += aᵀa`. Only the upper triangle is accumulated; the lower triangle
/// is then overwritten with its mirror so the result is exactly symmetric.
pub fn accumulate_gram(acc: &mut DenseMatrix, a: MatrixRef<'_>) -> Result<()> {
    let k = a.ncols();
    if acc.shape() != (k, k) {
        return Err(Error::mismatch("gram accumulator", acc.shape(), (k, k)));
    }
    match a.storage() {
        Storage::Dense(d) => {
            let c0 = a.col_range().start;
            for gi in a.row_range() {
                let r = &d.row(gi)[c0..c0 + k];
                for c in 0..k {
                    let rc = r[c];
                    let out = &mut acc.row_mut(c)[c..];
                    for (o, &x) in out.iter_mut().zip(&r[c..]) {
                        *o += rc * x;
                    }
                }
            }
        }
        Storage::Sparse(s) => {
            let cr = a.col_range();
            let data = acc.data_mut();
            for gi in a.row_range() {
                let (cols, vals) = s.row_window(gi, &cr);
                for p in 0..cols.len() {
                    let (cp, vp) = (cols[p] - cr.start, vals[p]);
                    for q in p..cols.len() {
                        data[cp * k + cols[q] - cr.start] += vp * vals[q];
                    }
                }
            }
        }
    }
    for c in 0..k {
        for d in 0..c {
            let v = acc.get(d, c);
            acc.set(c, d, v);
        }
    }
    Ok(())
}

/// `aᵀa` as a symmetric k×k matrix.
pub fn gram_t(a: MatrixRef<'_>) -> Result<DenseMatrix> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::InvalidMatrix(format!(
            "gram of empty {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut out = DenseMatrix::zeros(a.ncols(), a.ncols());
    accumulate_gram(&mut out, a)?;
    Ok(out)
}

/// `acc += Σ a_ij²` in row-major order.
pub fn accumulate_sum_squares(acc: &mut f64, a: MatrixRef<'_>) {
    for i in 0..a.nrows() {
        a.for_each_in_row(i, |_, v| *acc += v * v);
    }
}

pub fn frobenius_norm(a: MatrixRef<'_>) -> f64 {
    let mut s = 0.0;
    accumulate_sum_squares(&mut s, a);
    s.sqrt()
}

/// `target ← target ∘ numer / (denom + epsilon)`, in place.
pub fn hadamard_update(
    target: &mut DenseMatrix,
    numer: &DenseMatrix,
    denom: &DenseMatrix,
    epsilon: f64,
) -> Result<()> {
    if target.shape() != numer.shape() {
        return Err(Error::mismatch("hadamard numerator", target.shape(), numer.shape()));
    }
    if target.shape() != denom.shape() {
        return Err(Error::mismatch("hadamard denominator", target.shape(), denom.shape()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {epsilon}")));
    }
    for ((t, &n), &d) in target
        .data_mut()
        .iter_mut()
        .zip(numer.data())
        .zip(denom.data())
    {
        *t = *t * n / (d + epsilon);
    }
    Ok(())
}

/// `acc += ‖a − w h‖²_F` for one block, where `w` holds the block's rows of W
/// and `h` the block's columns of H. The `w @ h` block is materialized.
pub fn accumulate_residual(
    acc: &mut f64,
    a: MatrixRef<'_>,
    w: &DenseMatrix,
    h: &DenseMatrix,
) -> Result<()> {
    if w.rows() != a.nrows() || h.cols() != a.ncols() || w.cols() != h.rows() {
        return Err(Error::DimensionMismatch {
            op: "residual",
            left: format!("A {}x{}", a.nrows(), a.ncols()),
            right: format!(
                "W {}x{} H {}x{}",
                w.rows(),
                w.cols(),
                h.rows(),
                h.cols()
            ),
        });
    }
    let wh = matmul(w.as_ref(), h)?;
    match a.storage() {
        Storage::Dense(d) => {
            let cr = a.col_range();
            for (li, gi) in a.row_range().enumerate() {
                for (&x, &y) in d.row(gi)[cr.clone()].iter().zip(wh.row(li)) {
                    let r = x - y;
                    *acc += r * r;
                }
            }
        }
        Storage::Sparse(s) => {
            let cr = a.col_range();
            for (li, gi) in a.row_range().enumerate() {
                let (cols, vals) = s.row_window(gi, &cr);
                let mut p = 0;
                for (j, &y) in wh.row(li).iter().enumerate() {
                    let x = if p < cols.len() && cols[p] - cr.start == j {
                        p += 1;
                        vals[p - 1]
                    } else {
                        0.0
                    };
                    let r = x - y;
                    *acc += r * r;
                }
            }
        }
    }
    Ok(())
}

/// `‖A − WH‖_F / ‖A‖_F`, streaming row blocks so the dense product is never
/// materialized in full.
pub fn relative_error(a: MatrixRef<'_>, w: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    let per_row = (a.ncols().max(1) * 8) as u64;
    let block_rows = (DEFAULT_RESIDUAL_BLOCK_BYTES / per_row).max(1) as usize;
    relative_error_blocked(a, w, h, block_rows)
}

/// As [`relative_error`] with an explicit block height. The result does not
/// depend on `block_rows`.
pub fn relative_error_blocked(
    a: MatrixRef<'_>,
    w: &DenseMatrix,
    h: &DenseMatrix,
    block_rows: usize,
) -> Result<f64> {
    let (m, n) = a.shape();
    if w.rows() != m || h.cols() != n || w.cols() != h.rows() {
        return Err(Error::DimensionMismatch {
            op: "relative_error",
            left: format!("A {m}x{n}"),
            right: format!(
                "W {}x{} H {}x{}",
                w.rows(),
                w.cols(),
                h.rows(),
                h.cols()
            ),
        });
    }
    let mut norm_sq = 0.0;
    accumulate_sum_squares(&mut norm_sq, a.clone());
    if norm_sq == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let block_rows = block_rows.max(1);
    let mut res = 0.0;
    let mut r0 = 0;
    while r0 < m {
        let r1 = (r0 + block_rows).min(m);
        let wb = w.row_block(r0, r1);
        accumulate_residual(&mut res, a.window(r0..r1, 0..n)?, &wb, h)?;
        r0 = r1;
    }
    Ok(res.sqrt() / norm_sq.sqrt())
}

/// Fails with the first negative (or NaN) entry, in window-local coordinates.
pub fn validate_nonnegative(a: MatrixRef<'_>) -> Result<()> {
    for i in 0..a.nrows() {
        let mut bad = None;
        a.for_each_in_row(i, |j, v| {
            if bad.is_none() && !(v >= 0.0) {
                bad = Some((j, v));
            }
        });
        if let Some((col, value)) = bad {
            return Err(Error::NegativeEntry { row: i, col, value });
        }
    }
    Ok(())
}
