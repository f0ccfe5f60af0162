//! Synthetic inputs: exact low-rank products with Gaussian-bump features,
//! and random sparse matrices of a given density.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, CsrMatrix, DenseMatrix, Matrix};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Column c is a Gaussian bump over the row index centred at
    /// `(c + 0.5) m / k` with width `m / (4k)`, on a uniform(0, 0.01) floor.
    #[default]
    GaussianBumps,
    Uniform,
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_bumps" | "gaussian" | "bumps" => Ok(FeatureKind::GaussianBumps),
            "uniform" => Ok(FeatureKind::Uniform),
            other => Err(Error::InvalidConfig(format!("unknown feature kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub m: usize,
    pub n: usize,
    pub k_true: usize,
    #[serde(default)]
    pub feature_kind: FeatureKind,
    /// Multiplicative noise: each entry scaled by uniform(1 − δ, 1 + δ).
    #[serde(default)]
    pub noise: Option<f64>,
    /// Keep each entry of A with this probability and store it as CSR.
    #[serde(default)]
    pub density: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(m: usize, n: usize, k_true: usize, seed: u64) -> Self {
        Self {
            m,
            n,
            k_true,
            feature_kind: FeatureKind::GaussianBumps,
            noise: None,
            density: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidConfig(format!("dimensions must be positive, got {}x{}", self.m, self.n)));
        }
        if self.k_true < 1 || self.k_true > self.m.min(self.n) {
            return Err(Error::InvalidConfig(format!(
                "k_true must be in [1, {}], got {}",
                self.m.min(self.n),
                self.k_true
            )));
        }
        if let Some(d) = self.noise {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidConfig(format!("noise must be in [0, 1), got {d}")));
            }
        }
        if let Some(d) = self.density {
            check_density(d)?;
        }
        Ok(())
    }
}

fn check_density(d: f64) -> Result<()> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(Error::InvalidConfig(format!("density must be in (0, 1], got {d}")));
    }
    Ok(())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[seed, stream]))
}

/// The ground-truth feature matrix W0 (m×k).
pub fn features(spec: &SynthSpec) -> DenseMatrix {
    let (m, k) = (spec.m, spec.k_true);
    let mut rng = rng_for(spec.seed, 1);
    match spec.feature_kind {
        FeatureKind::Uniform => DenseMatrix::from_fn(m, k, |_, _| rng.gen::<f64>()),
        FeatureKind::GaussianBumps => {
            let sigma = m as f64 / (4.0 * k as f64);
            DenseMatrix::from_fn(m, k, |i, c| {
                let mu = (c as f64 + 0.5) * m as f64 / k as f64;
                let z = (i as f64 - mu) / sigma;
                (-0.5 * z * z).exp() + 0.01 * rng.gen::<f64>()
            })
        }
    }
}

/// `(A, W0, H0)` with `A = W0 H0`, optionally perturbed by multiplicative
/// noise and thinned to a CSR matrix.
pub fn gen_lowrank(spec: &SynthSpec) -> Result<(Matrix, DenseMatrix, DenseMatrix)> {
    spec.validate()?;
    let w0 = features(spec);
    let mut rng = rng_for(spec.seed, 2);
    let h0 = DenseMatrix::from_fn(spec.k_true, spec.n, |_, _| rng.gen::<f64>());
    let mut a = matmul(w0.as_ref(), &h0)?;
    if let Some(delta) = spec.noise.filter(|&d| d > 0.0) {
        let mut rng = rng_for(spec.seed, 3);
        for v in a.data_mut() {
            *v *= rng.gen_range(1.0 - delta..=1.0 + delta);
        }
    }
    let a = match spec.density {
        Some(d) if d < 1.0 => {
            let mut rng = rng_for(spec.seed, 4);
            for v in a.data_mut() {
                if rng.gen::<f64>() >= d {
                    *v = 0.0;
                }
            }
            Matrix::Sparse(CsrMatrix::from_dense(&a))
        }
        Some(_) => Matrix::Sparse(CsrMatrix::from_dense(&a)),
        None => Matrix::Dense(a),
    };
    Ok((a, w0, h0))
}

/// An m×n CSR matrix whose entries are independently nonzero with
/// probability `density`, values uniform on (0, 1]. Positions are drawn by
/// geometric skipping, so no dense buffer is ever allocated.
pub fn gen_sparse_random(m: usize, n: usize, density: f64, seed: u64) -> Result<CsrMatrix> {
    check_density(density)?;
    let mut rng = rng_for(seed, 5);
    let total = m as u128 * n as u128;
    let expected = (total as f64 * density) as usize;
    let mut row_ptr = Vec::with_capacity(m + 1);
    let mut col_idx = Vec::with_capacity(expected + expected / 16 + 16);
    let mut values = Vec::with_capacity(col_idx.capacity());
    row_ptr.push(0);
    let log_q = (1.0 - density).ln();
    let mut pos: u128 = 0;
    let mut row = 0usize;
    loop {
        if density < 1.0 {
            // number of failures before the next success
            let u: f64 = 1.0 - rng.gen::<f64>();
            let skip = (u.ln() / log_q).floor();
            if !skip.is_finite() || skip >= (total - pos) as f64 {
                break;
            }
            pos += skip as u128;
        }
        if pos >= total {
            break;
        }
        let (i, j) = ((pos / n as u128) as usize, (pos % n as u128) as usize);
        while row < i {
            row_ptr.push(col_idx.len());
            row += 1;
        }
        col_idx.push(j);
        values.push(1.0 - rng.gen::<f64>());
        pos += 1;
    }
    while row < m {
        row_ptr.push(col_idx.len());
        row += 1;
    }
    CsrMatrix::new(m, n, row_ptr, col_idx, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let s = SynthSpec::new(30, 20, 3, 7);
        let (a1, w1, h1) = gen_lowrank(&s).unwrap();
        let (a2, w2, h2) = gen_lowrank(&s).unwrap();
        assert_eq!(a1.to_dense(), a2.to_dense());
        assert_eq!((w1, h1), (w2, h2));
        let (a3, ..) = gen_lowrank(&SynthSpec { seed: 8, ..s }).unwrap();
        assert_ne!(a1.to_dense(), a3.to_dense());
    }

    #[test]
    fn rank_one_is_an_outer_product() {
        let (a, w, h) = gen_lowrank(&SynthSpec::new(12, 9, 1, 3)).unwrap();
        let a = a.to_dense();
        assert!(a.data().iter().all(|&v| v >= 0.0));
        for i in 0..12 {
            for j in 0..9 {
                assert_eq!(a.get(i, j), w.get(i, 0) * h.get(0, j));
            }
        }
    }

    #[test]
    fn bumps_peak_at_their_means() {
        let w = features(&SynthSpec::new(400, 10, 4, 1));
        for c in 0..4 {
            let argmax = (0..400).max_by(|&a, &b| w.get(a, c).total_cmp(&w.get(b, c))).unwrap();
            let mu = (c as f64 + 0.5) * 100.0;
            assert!((argmax as f64 - mu).abs() <= 2.0, "column {c} peaks at {argmax}");
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_lowrank(&SynthSpec::new(0, 5, 1, 0)).is_err());
        assert!(gen_lowrank(&SynthSpec::new(5, 5, 6, 0)).is_err());
        assert!(gen_lowrank(&SynthSpec { density: Some(0.0), ..SynthSpec::new(5, 5, 1, 0) }).is_err());
        assert!(gen_sparse_random(5, 5, 1.5, 0).is_err());
    }

    #[test]
    fn noise_is_bounded() {
        let s = SynthSpec { noise: Some(0.05), ..SynthSpec::new(20, 15, 2, 4) };
        let (a, w, h) = gen_lowrank(&s).unwrap();
        let clean = matmul(w.as_ref(), &h).unwrap();
        for (x, y) in a.to_dense().data().iter().zip(clean.data()) {
            assert!((x / y - 1.0).abs() <= 0.05 + 1e-15);
        }
    }

    #[test]
    fn sparse_density_within_five_sigma() {
        let s = gen_sparse_random(1000, 1000, 0.01, 11).unwrap();
        s.check_structure().unwrap();
        let nnz = s.nnz() as f64;
        let sigma = (1e6f64 * 0.01 * 0.99).sqrt();
        assert!((nnz - 10_000.0).abs() <= 5.0 * sigma, "nnz = {nnz}");
        assert!(s.values().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn density_one_is_full() {
        let s = gen_sparse_random(7, 5, 1.0, 2).unwrap();
        assert_eq!(s.nnz(), 35);
    }
}
