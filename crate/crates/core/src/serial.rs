//! Single-worker multiplicative-update NMF. This is the reference the
//! distributed and out-of-core paths are checked against, so it uses the
//! same kernels in the same order.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::comm::CollectiveStats;
use crate::counters::PhaseCounters;
use crate::error::{Error, Result};
use crate::linalg::{
    accumulate_gram, accumulate_product, accumulate_residual, accumulate_sum_squares,
    accumulate_transpose_product, hadamard_update, matmul, validate_nonnegative, DenseMatrix,
    MatrixRef, DEFAULT_EPSILON, DEFAULT_RESIDUAL_BLOCK_BYTES,
};
use crate::rng::CounterRng;

const W_STREAM: u64 = 0x57;
const H_STREAM: u64 = 0x48;

/// How the factors are initialized.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum Init {
    /// i.i.d. uniform(0, 1) from [`CounterRng`] keyed by the config seed.
    #[default]
    Uniform01,
    /// Explicit starting factors (W m×k, H k×n).
    Given { w: DenseMatrix, h: DenseMatrix },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub k: usize,
    /// Stop once the relative error at a check point is at or below this.
    pub eta: f64,
    pub max_iters: usize,
    pub error_check_interval: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub init: Init,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            k: 1,
            eta: 1e-4,
            max_iters: 1000,
            error_check_interval: 10,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            init: Init::Uniform01,
        }
    }
}

impl NmfConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidConfig(format!("eta must be >= 0, got {}", self.eta)));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.error_check_interval < 1 {
            return Err(Error::InvalidConfig("error_check_interval must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be a positive finite number, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Whether the relative error is evaluated after iteration `it` (1-based).
    pub fn is_check_point(&self, it: usize) -> bool {
        it % self.error_check_interval == 0 || it == self.max_iters
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub iteration: usize,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfResult {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    pub error_trace: Vec<ErrorSample>,
    pub iterations_run: usize,
    pub converged: bool,
    pub counters: PhaseCounters,
    #[serde(default)]
    pub collectives: CollectiveStats,
}

impl NmfResult {
    pub fn final_error(&self) -> f64 {
        self.error_trace.last().map_or(f64::NAN, |s| s.relative_error)
    }
}

/// Rows `rows` × columns `cols` of the uniform(0,1) initial W for an m×k problem.
/// Any slab equals the same slab of the full draw.
pub fn init_w_block(
    seed: u64,
    k: usize,
    rows: std::ops::Range<usize>,
) -> DenseMatrix {
    let rng = CounterRng::new(seed, W_STREAM);
    let r0 = rows.start;
    DenseMatrix::from_fn(rows.len(), k, |i, c| rng.uniform(((r0 + i) * k + c) as u64))
}

/// Columns `cols` of the uniform(0,1) initial H for a k×n problem.
pub fn init_h_block(
    seed: u64,
    k: usize,
    n: usize,
    cols: std::ops::Range<usize>,
) -> DenseMatrix {
    let rng = CounterRng::new(seed, H_STREAM);
    let c0 = cols.start;
    DenseMatrix::from_fn(k, cols.len(), |c, j| rng.uniform((c * n + c0 + j) as u64))
}

/// Initial `(W, H)` drawn i.i.d. uniform(0, 1).
pub fn init_factors(m: usize, n: usize, k: usize, seed: u64) -> (DenseMatrix, DenseMatrix) {
    (init_w_block(seed, k, 0..m), init_h_block(seed, k, n, 0..n))
}

/// `W ← W ∘ (A Hᵀ) / (W (H Hᵀ) + ε)`.
pub fn w_half_step(a: MatrixRef<'_>, w: &mut DenseMatrix, h: &DenseMatrix, epsilon: f64) -> Result<()> {
    let k = h.rows();
    let ht = h.transpose();
    let mut hht = DenseMatrix::zeros(k, k);
    accumulate_gram(&mut hht, ht.as_ref())?;
    let mut aht = DenseMatrix::zeros(a.nrows(), k);
    accumulate_product(&mut aht, a, &ht)?;
    let whht = matmul(w.as_ref(), &hht)?;
    hadamard_update(w, &aht, &whht, epsilon)
}

/// `H ← H ∘ (Wᵀ A) / ((Wᵀ W) H + ε)`.
pub fn h_half_step(a: MatrixRef<'_>, w: &DenseMatrix, h: &mut DenseMatrix, epsilon: f64) -> Result<()> {
    let k = w.cols();
    let mut wtw = DenseMatrix::zeros(k, k);
    accumulate_gram(&mut wtw, w.as_ref())?;
    let mut wta = DenseMatrix::zeros(k, a.ncols());
    accumulate_transpose_product(&mut wta, w, a)?;
    let denom = matmul(wtw.as_ref(), h)?;
    hadamard_update(h, &wta, &denom, epsilon)
}

/// `‖A − WH‖²_F`, streamed over row blocks.
pub fn residual_sq(a: MatrixRef<'_>, w: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    let (m, n) = a.shape();
    let block = (DEFAULT_RESIDUAL_BLOCK_BYTES / (n.max(1) * 8) as u64).max(1) as usize;
    let mut acc = 0.0;
    let mut r0 = 0;
    while r0 < m {
        let r1 = (r0 + block).min(m);
        accumulate_residual(&mut acc, a.window(r0..r1, 0..n)?, &w.row_block(r0, r1), h)?;
        r0 = r1;
    }
    Ok(acc)
}

pub(crate) fn check_finite(w: &DenseMatrix, h: &DenseMatrix, iteration: usize) -> Result<()> {
    if !w.is_finite() {
        return Err(Error::Divergence { factor: "W", iteration });
    }
    if !h.is_finite() {
        return Err(Error::Divergence { factor: "H", iteration });
    }
    Ok(())
}

pub(crate) fn update_flops(rows: usize, cols: usize, stored: usize, k: usize) -> f64 {
    // numerator 2·nnz·k, gram k²·(other dim), denominator 2·k²·(own dim), update 2·(own dim)·k
    let (r, c, s, k) = (rows as f64, cols as f64, stored as f64, k as f64);
    2.0 * s * k + k * k * c + 2.0 * k * k * r + 2.0 * r * k
}

/// Multiplicative-update NMF on one worker. Each iteration updates W, then H.
pub fn nmf_serial(a: MatrixRef<'_>, cfg: &NmfConfig) -> Result<NmfResult> {
    cfg.validate()?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidConfig(format!("matrix dimensions must be positive, got {m}x{n}")));
    }
    validate_nonnegative(a.clone())?;
    let start = Instant::now();
    let mut counters = PhaseCounters::default();

    let (mut w, mut h) = match &cfg.init {
        Init::Uniform01 => init_factors(m, n, cfg.k, cfg.seed),
        Init::Given { w, h } => {
            if w.shape() != (m, cfg.k) || h.shape() != (cfg.k, n) {
                return Err(Error::DimensionMismatch {
                    op: "initial factors",
                    left: format!("W {}x{} H {}x{}", w.rows(), w.cols(), h.rows(), h.cols()),
                    right: format!("expected W {m}x{} H {}x{n}", cfg.k, cfg.k),
                });
            }
            validate_nonnegative(w.as_ref())?;
            validate_nonnegative(h.as_ref())?;
            (w.clone(), h.clone())
        }
    };

    let t = Instant::now();
    let mut norm_sq = 0.0;
    accumulate_sum_squares(&mut norm_sq, a.clone());
    counters.error_check_s += t.elapsed().as_secs_f64();
    if norm_sq == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let norm = norm_sq.sqrt();
    let stored = a.stored();
    let k = cfg.k;
    let fixed = w.nbytes() + h.nbytes();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;
    for it in 1..=cfg.max_iters {
        let t = Instant::now();
        w_half_step(a.clone(), &mut w, &h, cfg.epsilon)?;
        counters.w_update_s += t.elapsed().as_secs_f64();
        counters.w_update_flops += update_flops(m, n, stored, k);

        let t = Instant::now();
        h_half_step(a.clone(), &w, &mut h, cfg.epsilon)?;
        counters.h_update_s += t.elapsed().as_secs_f64();
        counters.h_update_flops += update_flops(n, m, stored, k);
        iterations_run = it;

        // W/H plus the k×n and m×k numerators and denominators
        counters.track_peak(fixed + 2 * (m * k + k * n) as u64 * 8);

        if cfg.is_check_point(it) {
            let t = Instant::now();
            check_finite(&w, &h, it)?;
            let res = residual_sq(a.clone(), &w, &h)?;
            let err = res.sqrt() / norm;
            counters.error_check_s += t.elapsed().as_secs_f64();
            counters.error_check_flops += 2.0 * (m * n * k) as f64 + 3.0 * (m * n) as f64;
            trace.push(ErrorSample {
                iteration: it,
                relative_error: err,
            });
            if err <= cfg.eta {
                converged = true;
                break;
            }
        }
    }
    counters.total_s = start.elapsed().as_secs_f64();
    Ok(NmfResult {
        w,
        h,
        error_trace: trace,
        iterations_run,
        converged,
        counters,
        collectives: CollectiveStats::default(),
    })
}
