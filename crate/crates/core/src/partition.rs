//! 1-D data layouts for distributed NMF.
//!
//! Under CNMF every worker owns a column slab of A and H and a full copy of W;
//! the H-update is local and batches cut the row axis. RNMF is the transpose:
//! row slabs of A and W, replicated H, batches cut the column axis.
//!
//! Extents that do not divide evenly are handled by giving the first
//! `len mod parts` pieces one extra index.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Cnmf,
    Rnmf,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Cnmf => "cnmf",
            Strategy::Rnmf => "rnmf",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnmf" => Ok(Strategy::Cnmf),
            "rnmf" => Ok(Strategy::Rnmf),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other}"))),
        }
    }
}

/// Column partition when the matrix is wider than tall, row partition otherwise.
pub fn choose_strategy(m: usize, n: usize) -> Strategy {
    if n > m {
        Strategy::Cnmf
    } else {
        Strategy::Rnmf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorRole {
    Replicated,
    Slab,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerDescriptor {
    pub rank: usize,
    pub a_rows: Range<usize>,
    pub a_cols: Range<usize>,
    pub w_role: FactorRole,
    pub h_role: FactorRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub strategy: Strategy,
    pub n_workers: usize,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// Largest per-worker slab extent along the partitioned axis (J).
    pub slab_extent: usize,
    /// Largest batch extent along the batched axis (I).
    pub batch_extent: usize,
    pub n_batches: usize,
    /// Batch ranges along the batched axis, shared by all workers.
    pub batches: Vec<Range<usize>>,
    pub workers: Vec<WorkerDescriptor>,
}

/// Splits `0..len` into `parts` contiguous ranges; the first `len % parts` get one extra.
pub fn split_even(len: usize, parts: usize) -> Vec<Range<usize>> {
    let base = len / parts;
    let extra = len % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let w = base + usize::from(p < extra);
        out.push(start..start + w);
        start += w;
    }
    out
}

pub fn make_plan(
    m: usize,
    n: usize,
    k: usize,
    n_workers: usize,
    n_batches: usize,
    strategy: Strategy,
) -> Result<PartitionPlan> {
    if m == 0 || n == 0 || k == 0 {
        return Err(Error::InvalidConfig(format!("dimensions must be positive: m={m} n={n} k={k}")));
    }
    if n_workers == 0 || n_batches == 0 {
        return Err(Error::InvalidConfig("workers and batches must be >= 1".into()));
    }
    let (part_len, batch_len, part_name, batch_name) = match strategy {
        Strategy::Cnmf => (n, m, "columns", "rows"),
        Strategy::Rnmf => (m, n, "rows", "columns"),
    };
    if n_workers > part_len {
        return Err(Error::Infeasible(format!(
            "{n_workers} workers but only {part_len} {part_name} to partition"
        )));
    }
    if n_batches > batch_len {
        return Err(Error::Infeasible(format!(
            "{n_batches} batches but only {batch_len} {batch_name} to batch"
        )));
    }
    let slabs = split_even(part_len, n_workers);
    let batches = split_even(batch_len, n_batches);
    let workers = slabs
        .iter()
        .enumerate()
        .map(|(rank, slab)| match strategy {
            Strategy::Cnmf => WorkerDescriptor {
                rank,
                a_rows: 0..m,
                a_cols: slab.clone(),
                w_role: FactorRole::Replicated,
                h_role: FactorRole::Slab,
            },
            Strategy::Rnmf => WorkerDescriptor {
                rank,
                a_rows: slab.clone(),
                a_cols: 0..n,
                w_role: FactorRole::Slab,
                h_role: FactorRole::Replicated,
            },
        })
        .collect();
    Ok(PartitionPlan {
        strategy,
        n_workers,
        m,
        n,
        k,
        slab_extent: slabs[0].len(),
        batch_extent: batches[0].len(),
        n_batches,
        batches,
        workers,
    })
}

impl PartitionPlan {
    pub fn worker(&self, rank: usize) -> &WorkerDescriptor {
        &self.workers[rank]
    }

    /// Slab of the partitioned axis owned by `rank`.
    pub fn slab(&self, rank: usize) -> Range<usize> {
        let w = &self.workers[rank];
        match self.strategy {
            Strategy::Cnmf => w.a_cols.clone(),
            Strategy::Rnmf => w.a_rows.clone(),
        }
    }

    /// A-window `(rows, cols)` of batch `p` for `rank`, in global coordinates.
    pub fn batch_window(&self, rank: usize, p: usize) -> (Range<usize>, Range<usize>) {
        let w = &self.workers[rank];
        let b = self.batches[p].clone();
        match self.strategy {
            Strategy::Cnmf => (b, w.a_cols.clone()),
            Strategy::Rnmf => (w.a_rows.clone(), b),
        }
    }

    /// Length of the axis that batches cut.
    pub fn batch_axis_len(&self) -> usize {
        match self.strategy {
            Strategy::Cnmf => self.m,
            Strategy::Rnmf => self.n,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Predicted per-worker footprint, in bytes, for the widest worker of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub strategy: Strategy,
    pub n_batches: usize,
    pub n_cb: usize,
    pub density: f64,
    /// Size of the whole observation matrix in its storage format.
    pub s_a_bytes: u64,
    pub a_slab_bytes: u64,
    pub a_batch_bytes: u64,
    /// At most `min(n_cb, n_batches)` batches are resident at once.
    pub batch_resident_bytes: u64,
    pub factor_bytes: u64,
    pub h_update_bytes: u64,
    pub w_update_bytes: u64,
    pub error_check_bytes: u64,
    pub peak_bytes: u64,
    pub budget_bytes: u64,
    /// Smallest batch count whose peak fits the budget.
    pub min_batches: usize,
}

impl MemoryReport {
    pub fn fits(&self) -> bool {
        self.peak_bytes <= self.budget_bytes
    }
}

fn a_bytes(rows: usize, cols: usize, density: f64) -> u64 {
    if density >= 1.0 {
        (rows * cols * 8) as u64
    } else {
        let cells = rows * cols;
        let nnz = ((density * cells as f64).ceil() as usize).min(cells);
        CsrMatrix::storage_bytes(rows, nnz)
    }
}

struct Footprint {
    a_slab: u64,
    a_batch: u64,
    resident: u64,
    factors: u64,
    h_update: u64,
    w_update: u64,
    error_check: u64,
    peak: u64,
}

fn footprint(
    strategy: Strategy,
    m: usize,
    n: usize,
    k: usize,
    slab: usize,
    batch: usize,
    n_batches: usize,
    density: f64,
    n_cb: usize,
) -> Footprint {
    let f = |r: usize, c: usize| (r * c * 8) as u64;
    let (a_slab, a_batch, factors, h_update, w_update, error_check) = match strategy {
        Strategy::Cnmf => {
            let (j, i) = (slab, batch);
            (
                a_bytes(m, j, density),
                a_bytes(i, j, density),
                f(m, k) + f(k, j),
                // WTA, WTW, W_p, WTW@H
                f(k, j) + f(k, k) + f(i, k) + f(k, j),
                // Hᵀ, HHT, W_p, WHHT_p, AHT_p
                f(j, k) + f(k, k) + 3 * f(i, k),
                // W_p, WH block
                f(i, k) + f(i, j),
            )
        }
        Strategy::Rnmf => {
            let (j, i) = (slab, batch);
            (
                a_bytes(j, n, density),
                a_bytes(j, i, density),
                f(j, k) + f(k, n),
                // WTW, WTA_b, H_b, denominator
                f(k, k) + 3 * f(k, i),
                // HHT, AHT, H_b, H_bᵀ, WHHT
                f(k, k) + f(j, k) + 2 * f(k, i) + f(j, k),
                // H_b, WH block
                f(k, i) + f(j, i),
            )
        }
    };
    let resident = n_cb.min(n_batches) as u64 * a_batch;
    let peak = factors + resident + h_update.max(w_update).max(error_check);
    Footprint {
        a_slab,
        a_batch,
        resident,
        factors,
        h_update,
        w_update,
        error_check,
        peak,
    }
}

/// Per-worker memory model for `plan`, and the smallest batch count that fits
/// `budget_bytes`. `density` is the (worst-case) fraction of stored entries
/// per batch; 1.0 means dense storage.
pub fn memory_estimate(
    plan: &PartitionPlan,
    density: f64,
    n_cb: usize,
    budget_bytes: u64,
) -> Result<MemoryReport> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidConfig(format!("density must be in (0, 1], got {density}")));
    }
    if budget_bytes == 0 {
        return Err(Error::InvalidConfig("budget must be > 0 bytes".into()));
    }
    if n_cb == 0 {
        return Err(Error::InvalidConfig("n_cb must be >= 1".into()));
    }
    let (m, n, k) = (plan.m, plan.n, plan.k);
    let axis = plan.batch_axis_len();
    let at = |nb: usize| {
        let batch = axis.div_ceil(nb);
        footprint(plan.strategy, m, n, k, plan.slab_extent, batch, nb, density, n_cb)
    };
    let min_batches = (1..=axis).find(|&nb| at(nb).peak <= budget_bytes).ok_or_else(|| {
        let best = at(axis);
        Error::Infeasible(format!(
            "budget {budget_bytes} B is below the {} B needed even with {axis} batches (factors alone take {} B)",
            best.peak, best.factors
        ))
    })?;
    let fp = at(plan.n_batches);
    Ok(MemoryReport {
        strategy: plan.strategy,
        n_batches: plan.n_batches,
        n_cb,
        density,
        s_a_bytes: a_bytes(m, n, density),
        a_slab_bytes: fp.a_slab,
        a_batch_bytes: fp.a_batch,
        batch_resident_bytes: fp.resident,
        factor_bytes: fp.factors,
        h_update_bytes: fp.h_update,
        w_update_bytes: fp.w_update,
        error_check_bytes: fp.error_check,
        peak_bytes: fp.peak,
        budget_bytes,
        min_batches,
    })
}
