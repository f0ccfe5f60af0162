//! Batched distributed multiplicative updates.
//!
//! Under CNMF each rank owns a column slab of A and of H while W is
//! replicated. The H-update is local; the W-update reduces `H Hᵀ` once and
//! `A_p Hᵀ` once per row batch. RNMF is the mirror image: rank slabs are row
//! slabs, W is local and the H-update reduces `WᵀW` once and `WᵀA_b` per
//! column batch.
//!
//! With one worker and one batch both strategies reproduce [`nmf_serial`]
//! bit for bit, because they call the same kernels in the same order.
//!
//! [`nmf_serial`]: crate::serial::nmf_serial

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::comm::{run_workers, spawn_group, tcp_local_group, Backend, CollectiveStats, CommHandle, PhaseTag, TcpConfig};
use crate::counters::PhaseCounters;
use crate::error::{Error, Result};
use crate::linalg::{
    accumulate_gram, accumulate_product, accumulate_residual, accumulate_sum_squares,
    accumulate_transpose_product, hadamard_update, matmul, validate_nonnegative, DenseMatrix, Matrix,
};
use crate::partition::{make_plan, memory_estimate, MemoryReport, PartitionPlan, Strategy};
use crate::rng::splitmix64;
use crate::serial::{check_finite, init_h_block, init_w_block, ErrorSample, Init, NmfConfig, NmfResult};
use crate::store::{Batch, ChunkStore, StoreConfig, StoreCounters, StoreSource, Window};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistOptions {
    pub store: StoreConfig,
    /// Verify after every update that the replicated factor is bit-identical
    /// on all ranks. Costs one extra small collective per iteration.
    pub check_replicas: bool,
}

impl Default for DistOptions {
    fn default() -> Self {
        Self {
            store: StoreConfig::unlimited(),
            check_replicas: false,
        }
    }
}

/// Per-rank state for one factorization.
pub struct WorkerState {
    pub rank: usize,
    pub plan: PartitionPlan,
    pub store: ChunkStore,
    /// Replicated m×k under CNMF, row slab under RNMF.
    pub w: DenseMatrix,
    /// Column slab under CNMF, replicated k×n under RNMF.
    pub h: DenseMatrix,
    pub epsilon: f64,
    pub counters: PhaseCounters,
}

struct PhaseClock {
    start: Instant,
    io: f64,
    allreduce: f64,
}

impl WorkerState {
    pub fn new(rank: usize, plan: PartitionPlan, store: ChunkStore, cfg: &NmfConfig) -> Result<Self> {
        if store.shape() != (plan.m, plan.n) {
            return Err(Error::InvalidConfig(format!(
                "plan is for {}x{} but the store holds {}x{}",
                plan.m,
                plan.n,
                store.shape().0,
                store.shape().1
            )));
        }
        if plan.k != cfg.k {
            return Err(Error::InvalidConfig(format!("plan k={} but config k={}", plan.k, cfg.k)));
        }
        if rank >= plan.n_workers {
            return Err(Error::InvalidConfig(format!("rank {rank} outside plan of {} workers", plan.n_workers)));
        }
        let slab = plan.slab(rank);
        let (m, n, k) = (plan.m, plan.n, plan.k);
        let (w, h) = match (&cfg.init, plan.strategy) {
            (Init::Uniform01, Strategy::Cnmf) => (init_w_block(cfg.seed, k, 0..m), init_h_block(cfg.seed, k, n, slab)),
            (Init::Uniform01, Strategy::Rnmf) => (init_w_block(cfg.seed, k, slab), init_h_block(cfg.seed, k, n, 0..n)),
            (Init::Given { w, h }, strategy) => {
                if w.shape() != (m, k) || h.shape() != (k, n) {
                    return Err(Error::DimensionMismatch {
                        op: "initial factors",
                        left: format!("W {}x{} H {}x{}", w.rows(), w.cols(), h.rows(), h.cols()),
                        right: format!("expected W {m}x{k} H {k}x{n}"),
                    });
                }
                validate_nonnegative(w.as_ref())?;
                validate_nonnegative(h.as_ref())?;
                match strategy {
                    Strategy::Cnmf => (w.clone(), h.col_block(slab.start, slab.end)),
                    Strategy::Rnmf => (w.row_block(slab.start, slab.end), h.clone()),
                }
            }
        };
        Ok(Self {
            rank,
            plan,
            store,
            w,
            h,
            epsilon: cfg.epsilon,
            counters: PhaseCounters::default(),
        })
    }

    fn clock(&self) -> PhaseClock {
        PhaseClock {
            start: Instant::now(),
            io: self.counters.io_s,
            allreduce: self.counters.allreduce_s,
        }
    }

    /// Wall time since `c`, minus the I/O and collective time booked meanwhile.
    fn exclusive(&self, c: &PhaseClock) -> f64 {
        let total = c.start.elapsed().as_secs_f64();
        let nested = (self.counters.io_s - c.io) + (self.counters.allreduce_s - c.allreduce);
        (total - nested).max(0.0)
    }

    fn window(&self, p: usize) -> Window {
        let (rows, cols) = self.plan.batch_window(self.rank, p);
        Window::new(rows, cols)
    }

    fn load(&mut self, p: usize) -> Result<Batch> {
        let t = Instant::now();
        let b = self.store.load_batch(self.window(p))?;
        if p + 1 < self.plan.n_batches {
            let next = self.window(p + 1);
            self.store.prefetch(next)?;
        }
        self.counters.io_s += t.elapsed().as_secs_f64();
        Ok(b)
    }

    fn release(&mut self, b: &Batch) -> Result<()> {
        let t = Instant::now();
        self.store.release_batch(b)?;
        self.counters.io_s += t.elapsed().as_secs_f64();
        Ok(())
    }

    fn reduce(&mut self, comm: &mut CommHandle, buf: &DenseMatrix, tag: PhaseTag) -> Result<DenseMatrix> {
        let t = Instant::now();
        let out = comm.all_reduce_sum(buf, tag);
        self.counters.allreduce_s += t.elapsed().as_secs_f64();
        out
    }

    /// Records the current footprint: factors, resident batches and `live`
    /// bytes of intermediates held by the caller.
    fn track(&mut self, live: u64) {
        let resident = self.store.resident_bytes();
        self.counters.peak_resident_batch_bytes = self.counters.peak_resident_batch_bytes.max(resident);
        self.counters
            .track_peak(self.w.nbytes() + self.h.nbytes() + resident + live);
    }

    fn sync_store_counters(&mut self) {
        let s = self.store.counters();
        self.counters.batch_loads = s.loads;
        self.counters.batch_evictions = s.evictions;
        self.counters.bytes_read = s.bytes_read;
        self.counters.peak_resident_batch_bytes = self.counters.peak_resident_batch_bytes.max(s.peak_resident_bytes);
    }
}

fn nbytes(ms: &[&DenseMatrix]) -> u64 {
    ms.iter().map(|m| m.nbytes()).sum()
}

fn flops_product(stored: usize, k: usize) -> f64 {
    2.0 * (stored * k) as f64
}

fn flops_gram(rows: usize, k: usize) -> f64 {
    (rows * k * (k + 1)) as f64
}

fn flops_dense(r: usize, inner: usize, c: usize) -> f64 {
    2.0 * (r * inner * c) as f64
}

/// CNMF H-update: purely local. Accumulates `WᵀA` and `WᵀW` over row batches,
/// then `H ← H ∘ WTA / (WTW H + ε)`.
pub fn h_update_cnmf(st: &mut WorkerState) -> Result<()> {
    let clock = st.clock();
    let k = st.plan.k;
    let j = st.h.cols();
    let mut wta = DenseMatrix::zeros(k, j);
    let mut wtw = DenseMatrix::zeros(k, k);
    for p in 0..st.plan.n_batches {
        let batch = st.load(p)?;
        let rows = st.plan.batches[p].clone();
        let w_p = st.w.row_block(rows.start, rows.end);
        accumulate_transpose_product(&mut wta, &w_p, batch.view())?;
        accumulate_gram(&mut wtw, w_p.as_ref())?;
        st.counters.h_update_flops += flops_product(batch.view().stored(), k) + flops_gram(rows.len(), k);
        st.track(nbytes(&[&wta, &wtw, &w_p]));
        st.release(&batch)?;
    }
    let denom = matmul(wtw.as_ref(), &st.h)?;
    st.track(nbytes(&[&wta, &wtw, &denom]));
    hadamard_update(&mut st.h, &wta, &denom, st.epsilon)?;
    st.counters.h_update_flops += flops_dense(k, k, j) + 2.0 * (k * j) as f64;
    st.counters.h_update_s += st.exclusive(&clock);
    Ok(())
}

/// CNMF W-update: reduces `H Hᵀ`, then per row batch reduces `A_p Hᵀ` and
/// updates `W_p`. Exactly `n_B + 1` collectives.
pub fn w_update_cnmf(st: &mut WorkerState, comm: &mut CommHandle) -> Result<()> {
    let clock = st.clock();
    let k = st.plan.k;
    let j = st.h.cols();
    let ht = st.h.transpose();
    let mut hht = DenseMatrix::zeros(k, k);
    accumulate_gram(&mut hht, ht.as_ref())?;
    st.counters.w_update_flops += flops_gram(j, k);
    let hht = st.reduce(comm, &hht, PhaseTag::W_UPDATE)?;
    for p in 0..st.plan.n_batches {
        let batch = st.load(p)?;
        let rows = st.plan.batches[p].clone();
        let mut w_p = st.w.row_block(rows.start, rows.end);
        let whht = matmul(w_p.as_ref(), &hht)?;
        let mut aht = DenseMatrix::zeros(rows.len(), k);
        accumulate_product(&mut aht, batch.view(), &ht)?;
        st.counters.w_update_flops += flops_dense(rows.len(), k, k) + flops_product(batch.view().stored(), k);
        st.track(nbytes(&[&ht, &hht, &w_p, &whht, &aht]));
        st.release(&batch)?;
        let aht = st.reduce(comm, &aht, PhaseTag::W_UPDATE)?;
        hadamard_update(&mut w_p, &aht, &whht, st.epsilon)?;
        st.counters.w_update_flops += 2.0 * (rows.len() * k) as f64;
        st.w.set_row_block(rows.start, &w_p);
    }
    st.counters.w_update_s += st.exclusive(&clock);
    Ok(())
}

/// RNMF W-update: purely local. Accumulates `H Hᵀ` and `A Hᵀ` over column
/// batches, then `W ← W ∘ AHT / (W HHT + ε)`.
pub fn w_update_rnmf(st: &mut WorkerState) -> Result<()> {
    let clock = st.clock();
    let k = st.plan.k;
    let j = st.w.rows();
    let mut hht = DenseMatrix::zeros(k, k);
    let mut aht = DenseMatrix::zeros(j, k);
    for b in 0..st.plan.n_batches {
        let batch = st.load(b)?;
        let cols = st.plan.batches[b].clone();
        let h_b = st.h.col_block(cols.start, cols.end);
        let ht_b = h_b.transpose();
        accumulate_gram(&mut hht, ht_b.as_ref())?;
        accumulate_product(&mut aht, batch.view(), &ht_b)?;
        st.counters.w_update_flops += flops_gram(cols.len(), k) + flops_product(batch.view().stored(), k);
        st.track(nbytes(&[&hht, &aht, &h_b, &ht_b]));
        st.release(&batch)?;
    }
    let whht = matmul(st.w.as_ref(), &hht)?;
    st.track(nbytes(&[&hht, &aht, &whht]));
    hadamard_update(&mut st.w, &aht, &whht, st.epsilon)?;
    st.counters.w_update_flops += flops_dense(j, k, k) + 2.0 * (j * k) as f64;
    st.counters.w_update_s += st.exclusive(&clock);
    Ok(())
}

/// RNMF H-update: reduces `WᵀW`, then per column batch reduces `WᵀA_b` and
/// updates `H_b`. Exactly `n_B + 1` collectives.
pub fn h_update_rnmf(st: &mut WorkerState, comm: &mut CommHandle) -> Result<()> {
    let clock = st.clock();
    let k = st.plan.k;
    let mut wtw = DenseMatrix::zeros(k, k);
    accumulate_gram(&mut wtw, st.w.as_ref())?;
    st.counters.h_update_flops += flops_gram(st.w.rows(), k);
    let wtw = st.reduce(comm, &wtw, PhaseTag::H_UPDATE)?;
    for b in 0..st.plan.n_batches {
        let batch = st.load(b)?;
        let cols = st.plan.batches[b].clone();
        let mut wta = DenseMatrix::zeros(k, cols.len());
        accumulate_transpose_product(&mut wta, &st.w, batch.view())?;
        st.counters.h_update_flops += flops_product(batch.view().stored(), k);
        st.track(nbytes(&[&wtw, &wta]));
        st.release(&batch)?;
        let wta = st.reduce(comm, &wta, PhaseTag::H_UPDATE)?;
        let mut h_b = st.h.col_block(cols.start, cols.end);
        let denom = matmul(wtw.as_ref(), &h_b)?;
        st.track(nbytes(&[&wtw, &wta, &h_b, &denom]));
        hadamard_update(&mut h_b, &wta, &denom, st.epsilon)?;
        st.counters.h_update_flops += flops_dense(k, k, cols.len()) + 2.0 * (k * cols.len()) as f64;
        st.h.set_col_block(cols.start, &h_b);
    }
    st.counters.h_update_s += st.exclusive(&clock);
    Ok(())
}

/// This rank's `‖A_slab‖²_F` (also validates nonnegativity).
fn local_norm_sq(st: &mut WorkerState) -> Result<f64> {
    let mut acc = 0.0;
    for p in 0..st.plan.n_batches {
        let batch = st.load(p)?;
        validate_nonnegative(batch.view())?;
        accumulate_sum_squares(&mut acc, batch.view());
        st.track(0);
        st.release(&batch)?;
    }
    Ok(acc)
}

/// This rank's `‖A_slab − (WH)_slab‖²_F`, batch by batch.
fn local_residual_sq(st: &mut WorkerState) -> Result<f64> {
    let mut acc = 0.0;
    for p in 0..st.plan.n_batches {
        let batch = st.load(p)?;
        let win = batch.window().clone();
        match st.plan.strategy {
            Strategy::Cnmf => {
                let w_p = st.w.row_block(win.rows.start, win.rows.end);
                accumulate_residual(&mut acc, batch.view(), &w_p, &st.h)?;
                st.track(w_p.nbytes() + (win.rows.len() * win.cols.len() * 8) as u64);
            }
            Strategy::Rnmf => {
                let h_b = st.h.col_block(win.cols.start, win.cols.end);
                accumulate_residual(&mut acc, batch.view(), &st.w, &h_b)?;
                st.track(h_b.nbytes() + (win.rows.len() * win.cols.len() * 8) as u64);
            }
        }
        st.counters.error_check_flops +=
            flops_dense(win.rows.len(), st.plan.k, win.cols.len()) + 3.0 * (win.rows.len() * win.cols.len()) as f64;
        st.release(&batch)?;
    }
    Ok(acc)
}

/// 64-bit digest of a matrix's bit pattern, split into four 16-bit chunks so
/// that sums over up to 2^37 ranks stay exact in f64.
fn replica_digest(m: &DenseMatrix) -> DenseMatrix {
    let mut h = splitmix64(m.rows() as u64 ^ ((m.cols() as u64) << 32));
    for &v in m.data() {
        h = splitmix64(h ^ v.to_bits());
    }
    DenseMatrix::from_fn(1, 4, |_, c| ((h >> (16 * c)) & 0xFFFF) as f64)
}

fn check_replicas(st: &mut WorkerState, comm: &mut CommHandle, iteration: usize) -> Result<()> {
    let (factor, m) = match st.plan.strategy {
        Strategy::Cnmf => ("W", &st.w),
        Strategy::Rnmf => ("H", &st.h),
    };
    let digest = replica_digest(m);
    let sum = st.reduce(comm, &digest, PhaseTag::CONSISTENCY)?;
    let n = comm.size() as f64;
    if digest.data().iter().zip(sum.data()).any(|(&d, &s)| d * n != s) {
        return Err(Error::Comm(format!(
            "replicated {factor} diverged across ranks after iteration {iteration}"
        )));
    }
    Ok(())
}

/// One rank's outcome of [`nmf_distributed`].
#[derive(Debug, Clone)]
pub struct DistRun {
    pub rank: usize,
    pub strategy: Strategy,
    pub n_workers: usize,
    pub n_batches: usize,
    /// Full gathered factors, identical on every rank.
    pub result: NmfResult,
    pub store: StoreCounters,
    pub memory: MemoryReport,
}

/// Serializable per-rank report (everything except the factors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub strategy: Strategy,
    pub n_workers: usize,
    pub n_batches: usize,
    pub iterations_run: usize,
    pub converged: bool,
    pub error_trace: Vec<ErrorSample>,
    pub counters: PhaseCounters,
    pub collectives: CollectiveStats,
    pub store: StoreCounters,
    pub memory: MemoryReport,
}

impl DistRun {
    pub fn report(&self) -> RankReport {
        RankReport {
            rank: self.rank,
            strategy: self.strategy,
            n_workers: self.n_workers,
            n_batches: self.n_batches,
            iterations_run: self.result.iterations_run,
            converged: self.result.converged,
            error_trace: self.result.error_trace.clone(),
            counters: self.result.counters.clone(),
            collectives: self.result.collectives.clone(),
            store: self.store.clone(),
            memory: self.memory.clone(),
        }
    }

    pub fn report_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.report())?)
    }
}

/// Worst stored-entry fraction over this rank's batches, as fed to
/// [`memory_estimate`].
fn batch_density(st: &mut WorkerState) -> Result<f64> {
    if !st.store.is_sparse() {
        return Ok(1.0);
    }
    let mut d: f64 = 0.0;
    for p in 0..st.plan.n_batches {
        let w = st.window(p);
        let cells = (w.rows.len() * w.cols.len()).max(1);
        d = d.max(st.store.window_nnz(&w)? as f64 / cells as f64);
    }
    // Below 1.0 the estimate prices CSR storage, which is what a sparse store holds.
    Ok(d.clamp(1e-12, 1.0 - 1e-12))
}

fn run_rank(st: &mut WorkerState, cfg: &NmfConfig, comm: &mut CommHandle, opts: &DistOptions) -> Result<(Vec<ErrorSample>, usize, bool)> {
    let clock = st.clock();
    let local = local_norm_sq(st)?;
    st.counters.error_check_s += st.exclusive(&clock);
    let norm_sq = st.reduce(comm, &DenseMatrix::filled(1, 1, local), PhaseTag::SETUP)?.get(0, 0);
    if norm_sq == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let norm = norm_sq.sqrt();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;
    for it in 1..=cfg.max_iters {
        match st.plan.strategy {
            Strategy::Cnmf => {
                w_update_cnmf(st, comm)?;
                if opts.check_replicas {
                    check_replicas(st, comm, it)?;
                }
                h_update_cnmf(st)?;
            }
            Strategy::Rnmf => {
                w_update_rnmf(st)?;
                h_update_rnmf(st, comm)?;
                if opts.check_replicas {
                    check_replicas(st, comm, it)?;
                }
            }
        }
        iterations_run = it;

        if cfg.is_check_point(it) {
            let clock = st.clock();
            check_finite(&st.w, &st.h, it)?;
            let local = local_residual_sq(st)?;
            let res = st.reduce(comm, &DenseMatrix::filled(1, 1, local), PhaseTag::ERROR_CHECK)?.get(0, 0);
            let err = res.sqrt() / norm;
            st.counters.error_check_s += st.exclusive(&clock);
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
    Ok((trace, iterations_run, converged))
}

/// Runs the factorization on this rank. Every rank of the group must call it
/// with the same `cfg`, `plan` and options. On failure the group is poisoned
/// so peers abort instead of waiting.
pub fn nmf_distributed(
    source: &StoreSource,
    cfg: &NmfConfig,
    plan: &PartitionPlan,
    comm: &mut CommHandle,
    opts: &DistOptions,
) -> Result<DistRun> {
    let out = nmf_distributed_inner(source, cfg, plan, comm, opts);
    if let Err(e) = &out {
        comm.poison(&e.to_string());
    }
    out
}

fn nmf_distributed_inner(
    source: &StoreSource,
    cfg: &NmfConfig,
    plan: &PartitionPlan,
    comm: &mut CommHandle,
    opts: &DistOptions,
) -> Result<DistRun> {
    let start = Instant::now();
    cfg.validate()?;
    if plan.n_workers != comm.size() {
        return Err(Error::InvalidConfig(format!(
            "plan has {} workers but the group has {}",
            plan.n_workers,
            comm.size()
        )));
    }
    let store = ChunkStore::open(source.clone(), opts.store)?;
    let mut st = WorkerState::new(comm.rank(), plan.clone(), store, cfg)?;
    let density = batch_density(&mut st)?;
    let memory = memory_estimate(plan, density, opts.store.n_cb, opts.store.budget_bytes)?;
    if !memory.fits() {
        return Err(Error::Budget(format!(
            "plan with {} batches needs {} B per worker but the budget is {} B; use at least {} batches",
            plan.n_batches, memory.peak_bytes, memory.budget_bytes, memory.min_batches
        )));
    }

    let (trace, iterations_run, converged) = run_rank(&mut st, cfg, comm, opts)?;

    // Gather: every rank contributes its slab into a zero-padded full factor.
    let slab = plan.slab(st.rank);
    let (w, h) = match plan.strategy {
        Strategy::Cnmf => {
            let mut full = DenseMatrix::zeros(plan.k, plan.n);
            full.set_col_block(slab.start, &st.h);
            let h = st.reduce(comm, &full, PhaseTag::GATHER)?;
            (st.w.clone(), h)
        }
        Strategy::Rnmf => {
            let mut full = DenseMatrix::zeros(plan.m, plan.k);
            full.set_row_block(slab.start, &st.w);
            let w = st.reduce(comm, &full, PhaseTag::GATHER)?;
            (w, st.h.clone())
        }
    };

    st.sync_store_counters();
    st.counters.total_s = start.elapsed().as_secs_f64();
    let collectives = comm.take_stats();
    Ok(DistRun {
        rank: st.rank,
        strategy: plan.strategy,
        n_workers: plan.n_workers,
        n_batches: plan.n_batches,
        result: NmfResult {
            w,
            h,
            error_trace: trace,
            iterations_run,
            converged,
            counters: st.counters,
            collectives,
        },
        store: st.store.counters().clone(),
        memory,
    })
}

/// Plan whose batch count is the smallest that fits `budget_bytes` per worker.
#[allow(clippy::too_many_arguments)]
pub fn plan_for_budget(
    m: usize,
    n: usize,
    k: usize,
    n_workers: usize,
    strategy: Strategy,
    density: f64,
    n_cb: usize,
    budget_bytes: u64,
) -> Result<PartitionPlan> {
    let probe = make_plan(m, n, k, n_workers, 1, strategy)?;
    let report = memory_estimate(&probe, density, n_cb, budget_bytes)?;
    make_plan(m, n, k, n_workers, report.min_batches, strategy)
}

/// Runs every rank of `plan` in this process over `backend` (`Loopback`
/// needs one worker; `Tcp` uses a local loopback group). Returns per-rank
/// runs in rank order, or the first error.
pub fn run_local_group(
    backend: Backend,
    source: &StoreSource,
    cfg: &NmfConfig,
    plan: &PartitionPlan,
    opts: &DistOptions,
) -> Result<Vec<DistRun>> {
    let handles = match backend {
        Backend::Tcp => tcp_local_group(plan.n_workers, &TcpConfig::default())?,
        other => spawn_group(plan.n_workers, other, None, None, crate::comm::DEFAULT_TIMEOUT)?,
    };
    let results = run_workers(handles, |mut h| nmf_distributed(source, cfg, plan, &mut h, opts));
    // Report the root cause rather than a peer's "poisoned" echo.
    let mut first_err = None;
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                let is_echo = matches!(e, Error::Poisoned(_));
                if first_err.is_none() || (!is_echo && matches!(first_err, Some(Error::Poisoned(_)))) {
                    first_err = Some(e);
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(runs),
    }
}

/// Convenience: an in-memory source.
pub fn in_memory(a: impl Into<Matrix>) -> StoreSource {
    StoreSource::InMemory(Arc::new(a.into()))
}
