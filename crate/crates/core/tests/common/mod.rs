//! Brute-force oracles and random-input helpers shared by the integration
//! tests and the acceptance target.
#![allow(dead_code)]

use oocnmf::linalg::io::{read_mtx_from, read_pdn1, write_mtx_to, write_pdn1};
use oocnmf::linalg::{
    accumulate_gram, accumulate_product, accumulate_residual, accumulate_transpose_product, frobenius_norm, gram_t,
    hadamard_update, matmul, relative_error_blocked, validate_nonnegative, CsrMatrix, DenseMatrix, Matrix, MatrixRef,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KERNEL_TOL: f64 = 1e-12;

/// Dense or CSR matrix with entries in `[lo, 1)`; CSR with a random fill.
pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sparse: bool, lo: f64) -> Matrix {
    let fill = rng.gen_range(0.0..=1.0);
    let d = DenseMatrix::from_fn(rows, cols, |_, _| {
        if sparse && rng.gen::<f64>() >= fill {
            0.0
        } else {
            rng.gen_range(lo..1.0)
        }
    });
    if sparse {
        Matrix::Sparse(CsrMatrix::from_dense(&d))
    } else {
        Matrix::Dense(d)
    }
}

pub fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..1.0))
}

/// A random sub-window of `a` (possibly the whole matrix).
pub fn random_window<'a>(rng: &mut ChaCha8Rng, a: &'a Matrix) -> MatrixRef<'a> {
    let (m, n) = a.shape();
    let r0 = rng.gen_range(0..m);
    let r1 = rng.gen_range(r0 + 1..=m);
    let c0 = rng.gen_range(0..n);
    let c1 = rng.gen_range(c0 + 1..=n);
    a.as_ref().window(r0..r1, c0..c1).unwrap()
}

fn dense_of(a: &MatrixRef<'_>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a.get(i, j)).collect()).collect()
}

/// Checks `got` against `want` elementwise: `|got - want| ≤ tol · scale`,
/// where `scale` is the sum of absolute terms that formed the entry.
fn close(got: &DenseMatrix, want: &[Vec<f64>], scale: &[Vec<f64>], what: &str) -> Result<(), TestCaseError> {
    prop_assert_eq!(got.rows(), want.len(), "{} rows", what);
    for (i, (wr, sr)) in want.iter().zip(scale).enumerate() {
        for (j, (&w, &s)) in wr.iter().zip(sr).enumerate() {
            let g = got.get(i, j);
            prop_assert!(
                (g - w).abs() <= KERNEL_TOL * s.max(f64::MIN_POSITIVE),
                "{} ({}, {}): got {}, want {}",
                what,
                i,
                j,
                g,
                w
            );
        }
    }
    Ok(())
}

fn brute_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (m, k, n) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; n]; m];
    let mut abs = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i][j] += a[i][p] * b[p][j];
                abs[i][j] += (a[i][p] * b[p][j]).abs();
            }
        }
    }
    (out, abs)
}

fn rows_of(d: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..d.rows()).map(|i| d.row(i).to_vec()).collect()
}

fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.first().map_or(0, Vec::len);
    (0..n).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub const KERNELS: &[&str] = &[
    "matmul",
    "accumulate_product",
    "accumulate_transpose_product",
    "gram_t",
    "accumulate_gram",
    "frobenius_norm",
    "hadamard_update",
    "accumulate_residual",
    "relative_error_blocked",
    "validate_nonnegative",
    "csr_conversions",
    "pdn1_round_trip",
    "mtx_round_trip",
];

fn one_case(kernel: &str, seed: u64) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n, k) = (rng.gen_range(1..=14), rng.gen_range(1..=14), rng.gen_range(1..=9));
    let sparse = rng.gen_bool(0.5);
    let a_full = random_matrix(&mut rng, m, n, sparse, -1.0);
    let a = random_window(&mut rng, &a_full);
    let ad = dense_of(&a);
    let (wm, wn) = a.shape();
    match kernel {
        "matmul" | "accumulate_product" => {
            let b = random_dense(&mut rng, wn, k, -1.0);
            let (mut want, scale) = brute_matmul(&ad, &rows_of(&b));
            let got = if kernel == "matmul" {
                matmul(a, &b).unwrap()
            } else {
                let init = random_dense(&mut rng, wm, k, -1.0);
                let mut acc = init.clone();
                accumulate_product(&mut acc, a, &b).unwrap();
                for (i, r) in want.iter_mut().enumerate() {
                    for (j, v) in r.iter_mut().enumerate() {
                        *v += init.get(i, j);
                    }
                }
                acc
            };
            close(&got, &want, &scale.iter().map(|r| r.iter().map(|s| s + 1.0).collect()).collect::<Vec<_>>(), kernel)
        }
        "accumulate_transpose_product" => {
            let w = random_dense(&mut rng, wm, k, -1.0);
            let (want, scale) = brute_matmul(&transpose(&rows_of(&w)), &ad);
            let mut acc = DenseMatrix::zeros(k, wn);
            accumulate_transpose_product(&mut acc, &w, a).unwrap();
            close(&acc, &want, &scale, kernel)
        }
        "gram_t" | "accumulate_gram" => {
            let (want, scale) = brute_matmul(&transpose(&ad), &ad);
            let got = if kernel == "gram_t" {
                gram_t(a).unwrap()
            } else {
                let mut acc = DenseMatrix::zeros(wn, wn);
                accumulate_gram(&mut acc, a).unwrap();
                acc
            };
            for i in 0..wn {
                for j in 0..wn {
                    prop_assert_eq!(got.get(i, j).to_bits(), got.get(j, i).to_bits(), "gram symmetry");
                }
            }
            close(&got, &want, &scale, kernel)
        }
        "frobenius_norm" => {
            let want: f64 = ad.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            let got = frobenius_norm(a);
            prop_assert!((got - want).abs() <= KERNEL_TOL * want.max(f64::MIN_POSITIVE), "{} vs {}", got, want);
            Ok(())
        }
        "hadamard_update" => {
            let t = random_dense(&mut rng, wm, k, 0.0);
            let num = random_dense(&mut rng, wm, k, 0.0);
            let den = random_dense(&mut rng, wm, k, 0.0);
            let eps = if rng.gen_bool(0.5) { 1e-12 } else { rng.gen_range(0.0..0.1) };
            let mut got = t.clone();
            hadamard_update(&mut got, &num, &den, eps).unwrap();
            let want: Vec<Vec<f64>> = (0..wm)
                .map(|i| (0..k).map(|j| t.get(i, j) * num.get(i, j) / (den.get(i, j) + eps)).collect())
                .collect();
            prop_assert!(got.data().iter().all(|&v| v >= 0.0));
            close(&got, &want, &want.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect::<Vec<_>>(), kernel)
        }
        "accumulate_residual" | "relative_error_blocked" => {
            let w = random_dense(&mut rng, wm, k, 0.0);
            let h = random_dense(&mut rng, k, wn, 0.0);
            let (wh, _) = brute_matmul(&rows_of(&w), &rows_of(&h));
            let mut want = 0.0;
            let mut scale = 0.0;
            for i in 0..wm {
                for j in 0..wn {
                    let d = ad[i][j] - wh[i][j];
                    want += d * d;
                    scale += (ad[i][j].abs() + wh[i][j].abs()).powi(2);
                }
            }
            if kernel == "accumulate_residual" {
                let mut got = 0.0;
                accumulate_residual(&mut got, a, &w, &h).unwrap();
                prop_assert!((got - want).abs() <= KERNEL_TOL * scale, "{} vs {}", got, want);
            } else {
                let norm: f64 = ad.iter().flatten().map(|v| v * v).sum::<f64>();
                if norm > 0.0 {
                    let block = rng.gen_range(1..=wm);
                    let got = relative_error_blocked(a, &w, &h, block).unwrap();
                    let want = (want / norm).sqrt();
                    prop_assert!((got - want).abs() <= 1e-10 * want.max(1e-12) + KERNEL_TOL * (scale / norm).sqrt(), "{} vs {}", got, want);
                }
            }
            Ok(())
        }
        "validate_nonnegative" => {
            let ok = ad.iter().flatten().all(|&v| v >= 0.0);
            prop_assert_eq!(validate_nonnegative(a).is_ok(), ok);
            let nonneg = random_matrix(&mut rng, m, n, sparse, 0.0);
            prop_assert!(validate_nonnegative(nonneg.as_ref()).is_ok());
            Ok(())
        }
        "csr_conversions" => {
            let d = a.to_dense();
            let s = CsrMatrix::from_dense(&d);
            s.check_structure().unwrap();
            prop_assert_eq!(&s.to_dense(), &d);
            prop_assert_eq!(s.nnz(), ad.iter().flatten().filter(|&&v| v != 0.0).count());
            prop_assert_eq!(s.transpose().transpose(), s.clone());
            prop_assert_eq!(rows_of(&s.transpose().to_dense()), transpose(&ad));
            Ok(())
        }
        "pdn1_round_trip" | "mtx_round_trip" => {
            let owned = a.to_owned_matrix();
            let back = if kernel == "pdn1_round_trip" {
                let dir = tempfile::tempdir().unwrap();
                let p = dir.path().join("a.pdn");
                write_pdn1(&p, owned.as_ref()).unwrap();
                read_pdn1(&p).unwrap()
            } else {
                let mut buf = Vec::new();
                write_mtx_to(&mut buf, owned.as_ref()).unwrap();
                read_mtx_from(&buf[..]).unwrap()
            };
            match (&owned, &back) {
                (Matrix::Sparse(x), Matrix::Sparse(y)) => {
                    prop_assert_eq!(x.row_ptr(), y.row_ptr());
                    prop_assert_eq!(x.col_idx(), y.col_idx());
                    let xb: Vec<u64> = x.values().iter().map(|v| v.to_bits()).collect();
                    let yb: Vec<u64> = y.values().iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(xb, yb);
                }
                (Matrix::Dense(x), Matrix::Dense(y)) => {
                    let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
                    let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(x.shape(), y.shape());
                    prop_assert_eq!(xb, yb);
                }
                _ => prop_assert!(false, "storage kind changed"),
            }
            Ok(())
        }
        other => panic!("unknown kernel {other}"),
    }
}

/// Runs `cases` randomized cases of `kernel` against its brute-force oracle.
pub fn check_kernel(kernel: &str, cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner
        .run(&any::<u64>(), |seed| one_case(kernel, seed))
        .map_err(|e| format!("{kernel}: {e}"))
}
pub mod scenarios;
