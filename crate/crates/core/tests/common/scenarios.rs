//! End-to-end scenarios shared by the integration tests and the acceptance
//! target. Each returns a description of the first violated property.

use std::sync::Arc;
use std::time::Duration;

use oocnmf::comm::{run_workers, spawn_group, tcp_local_group, Backend, PhaseTag, TcpConfig, DEFAULT_TIMEOUT};
use oocnmf::distributed::{in_memory, run_local_group, DistOptions, DistRun};
use oocnmf::linalg::io::write_pdn1;
use oocnmf::linalg::{DenseMatrix, Matrix};
use oocnmf::partition::{make_plan, memory_estimate, Strategy};
use oocnmf::serial::{nmf_serial, NmfConfig, NmfResult};
use oocnmf::store::{StoreConfig, StoreSource};
use oocnmf::synth::{gen_lowrank, gen_sparse_random, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Outcome = Result<(), String>;

pub const TRACE_TOL: f64 = 1e-8;
pub const FACTOR_TOL: f64 = 1e-6;

/// Dense low-rank-plus-floor data, or uniform sparse data at density 0.1.
pub fn input(m: usize, n: usize, sparse: bool, seed: u64) -> Matrix {
    if sparse {
        Matrix::Sparse(gen_sparse_random(m, n, 0.1, seed).unwrap())
    } else {
        let spec = SynthSpec { noise: Some(0.1), ..SynthSpec::new(m, n, 4, seed) };
        gen_lowrank(&spec).unwrap().0
    }
}

pub fn short_config(k: usize, iters: usize) -> NmfConfig {
    NmfConfig { k, eta: 0.0, max_iters: iters, error_check_interval: 1, seed: 11, ..NmfConfig::default() }
}

pub fn compare_traces(got: &NmfResult, want: &NmfResult, tol: f64) -> Outcome {
    if got.error_trace.len() != want.error_trace.len() {
        return Err(format!("trace lengths {} vs {}", got.error_trace.len(), want.error_trace.len()));
    }
    for (g, w) in got.error_trace.iter().zip(&want.error_trace) {
        let rel = (g.relative_error - w.relative_error).abs() / w.relative_error.abs().max(f64::MIN_POSITIVE);
        if g.iteration != w.iteration || !(rel <= tol) {
            return Err(format!(
                "iteration {}: error {} vs {} (rel diff {rel:.2e})",
                g.iteration, g.relative_error, w.relative_error
            ));
        }
    }
    Ok(())
}

pub fn compare_factors(got: &NmfResult, want: &NmfResult, tol: f64) -> Outcome {
    let (dw, dh) = (got.w.relative_diff(&want.w), got.h.relative_diff(&want.h));
    if dw <= tol && dh <= tol {
        Ok(())
    } else {
        Err(format!("factor rel diff W {dw:.2e}, H {dh:.2e}"))
    }
}

/// Every rank of a distributed run against the serial oracle.
pub fn equivalence(
    strategy: Strategy,
    n_workers: usize,
    backend: Backend,
    n_batches: usize,
    a: &Arc<Matrix>,
    oracle: &NmfResult,
    cfg: &NmfConfig,
) -> Outcome {
    let (m, n) = a.shape();
    let ctx = format!("{strategy} N={n_workers} {backend:?} n_B={n_batches} {m}x{n} sparse={}", a.is_sparse());
    let plan = make_plan(m, n, cfg.k, n_workers, n_batches, strategy).map_err(|e| format!("{ctx}: {e}"))?;
    let runs = run_local_group(backend, &StoreSource::InMemory(a.clone()), cfg, &plan, &DistOptions::default())
        .map_err(|e| format!("{ctx}: {e}"))?;
    for r in &runs {
        compare_traces(&r.result, oracle, TRACE_TOL).map_err(|e| format!("{ctx} rank {}: {e}", r.rank))?;
        compare_factors(&r.result, oracle, FACTOR_TOL).map_err(|e| format!("{ctx} rank {}: {e}", r.rank))?;
    }
    Ok(())
}

/// The whole strategy × N × backend × n_B × shape × storage grid, 20 iterations.
pub fn equivalence_grid(backends: &[Backend]) -> Outcome {
    let cfg = short_config(4, 20);
    for (m, n) in [(64, 256), (256, 64)] {
        for sparse in [false, true] {
            let a = Arc::new(input(m, n, sparse, (m * 7 + n) as u64 + sparse as u64));
            let oracle = nmf_serial(a.as_ref().as_ref(), &cfg).map_err(|e| e.to_string())?;
            for strategy in [Strategy::Cnmf, Strategy::Rnmf] {
                for &backend in backends {
                    for n_workers in 1..=4 {
                        for n_batches in [1, 2, 4] {
                            equivalence(strategy, n_workers, backend, n_batches, &a, &oracle, &cfg)?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn write_temp(a: &Matrix) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.pdn");
    write_pdn1(&p, a.as_ref()).unwrap();
    (dir, p)
}

/// File-backed runs whose budget forces `n_batches` against an unlimited
/// in-memory run. Returns the measured peaks alongside any violation.
pub fn out_of_core(strategy: Strategy, n_batches: usize, sparse: bool) -> Outcome {
    let (m, n, k, workers) = (96, 80, 4, 2);
    let a = input(m, n, sparse, 5 + n_batches as u64);
    let cfg = short_config(k, 15);
    let reference = run_local_group(
        Backend::Threads,
        &in_memory(a.clone()),
        &cfg,
        &make_plan(m, n, k, workers, 1, strategy).unwrap(),
        &DistOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let (_dir, path) = write_temp(&a);
    let plan = make_plan(m, n, k, workers, n_batches, strategy).unwrap();
    let n_cb = 2;
    // Price the plan with the densest possible batch so the budget always covers it.
    let budget = memory_estimate(&plan, 1.0, n_cb, u64::MAX).unwrap().peak_bytes;
    let at_one = memory_estimate(&make_plan(m, n, k, workers, 1, strategy).unwrap(), 1.0, n_cb, budget).unwrap();
    if !sparse && at_one.fits() && n_batches > 1 {
        return Err(format!("budget {budget} does not force batching"));
    }
    let opts = DistOptions { store: StoreConfig { budget_bytes: budget, n_cb, prefetch: true }, check_replicas: true };
    let runs = run_local_group(Backend::Threads, &StoreSource::File(path), &cfg, &plan, &opts).map_err(|e| e.to_string())?;
    for r in &runs {
        let ctx = format!("{strategy} n_B={n_batches} sparse={sparse} rank {}", r.rank);
        compare_traces(&r.result, &reference[0].result, TRACE_TOL).map_err(|e| format!("{ctx}: {e}"))?;
        if r.store.peak_resident_bytes > budget {
            return Err(format!("{ctx}: peak resident {} > budget {budget}", r.store.peak_resident_bytes));
        }
        if r.result.counters.peak_tracked_bytes > budget {
            return Err(format!("{ctx}: peak tracked {} > budget {budget}", r.result.counters.peak_tracked_bytes));
        }
        if r.store.loads == 0 {
            return Err(format!("{ctx}: no batch was read from the file"));
        }
    }
    Ok(())
}

/// Collective calls per iteration and their shapes.
pub fn communication(strategy: Strategy, n_workers: usize, n_batches: usize) -> Outcome {
    let (m, n, k, iters) = (90, 70, 3, 6);
    let a = input(m, n, false, 3);
    // One error check, on the final iteration.
    let cfg = NmfConfig { error_check_interval: iters + 10, ..short_config(k, iters) };
    let plan = make_plan(m, n, k, n_workers, n_batches, strategy).unwrap();
    let runs = run_local_group(Backend::Threads, &in_memory(a), &cfg, &plan, &DistOptions::default())
        .map_err(|e| e.to_string())?;
    let (busy, idle) = match strategy {
        Strategy::Cnmf => (PhaseTag::W_UPDATE, PhaseTag::H_UPDATE),
        Strategy::Rnmf => (PhaseTag::H_UPDATE, PhaseTag::W_UPDATE),
    };
    for r in &runs {
        let ctx = format!("{strategy} N={n_workers} n_B={n_batches} rank {}", r.rank);
        let s = &r.result.collectives;
        let want = (iters * (n_batches + 1)) as u64;
        if s.calls_for(busy) != want || s.calls_for(idle) != 0 {
            return Err(format!(
                "{ctx}: {} {busy} calls (want {want}), {} {idle} calls (want 0)",
                s.calls_for(busy),
                s.calls_for(idle)
            ));
        }
        if s.calls_for(PhaseTag::ERROR_CHECK) != 1 {
            return Err(format!("{ctx}: {} error checks", s.calls_for(PhaseTag::ERROR_CHECK)));
        }
        let per_iter: Vec<_> = s.log.iter().filter(|c| c.tag == busy).collect();
        for (it, chunk) in per_iter.chunks(n_batches + 1).enumerate() {
            let mut shapes: Vec<(usize, usize)> = chunk.iter().map(|c| (c.rows, c.cols)).collect();
            let gram = shapes.iter().position(|&s| s == (k, k)).ok_or(format!("{ctx}: iteration {it} has no kxk"))?;
            shapes.remove(gram);
            let mut want: Vec<(usize, usize)> = plan
                .batches
                .iter()
                .map(|b| match strategy {
                    Strategy::Cnmf => (b.len(), k),
                    Strategy::Rnmf => (k, b.len()),
                })
                .collect();
            shapes.sort_unstable();
            want.sort_unstable();
            if shapes != want {
                return Err(format!("{ctx}: iteration {it} batch shapes {shapes:?}, want {want:?}"));
            }
        }
    }
    Ok(())
}

fn sequential_sum(parts: &[DenseMatrix]) -> DenseMatrix {
    let mut acc = DenseMatrix::zeros(parts[0].rows(), parts[0].cols());
    for p in parts {
        for (a, b) in acc.data_mut().iter_mut().zip(p.data()) {
            *a += b;
        }
    }
    acc
}

/// `trials` all-reduces on `n` ranks with random per-rank delays before each
/// call; every result must equal the ascending-rank sequential sum bitwise.
pub fn allreduce_determinism(backend: Backend, n: usize, trials: usize, seed: u64) -> Outcome {
    let handles = match backend {
        Backend::Tcp => tcp_local_group(n, &TcpConfig::default()).map_err(|e| e.to_string())?,
        other => spawn_group(n, other, None, None, DEFAULT_TIMEOUT).map_err(|e| e.to_string())?,
    };
    // Values spanning many magnitudes so that any change of order shows in the bits.
    let inputs: Vec<Vec<DenseMatrix>> = (0..trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t as u64);
            let (r, c) = (rng.gen_range(1..6), rng.gen_range(1..6));
            (0..n)
                .map(|_| DenseMatrix::from_fn(r, c, |_, _| rng.gen::<f64>() * 10f64.powi(rng.gen_range(-8..8))))
                .collect()
        })
        .collect();
    let inputs = &inputs;
    let results = run_workers(handles, move |mut h| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000 + h.rank() as u64));
        let mut out = Vec::with_capacity(trials);
        for trial in inputs {
            std::thread::sleep(Duration::from_micros(rng.gen_range(0..2000)));
            out.push(h.all_reduce_sum(&trial[h.rank()], PhaseTag(42))?);
        }
        Ok(out)
    });
    for (rank, r) in results.into_iter().enumerate() {
        let sums = r.map_err(|e| format!("rank {rank}: {e}"))?;
        for (t, (got, parts)) in sums.iter().zip(inputs).enumerate() {
            let want = sequential_sum(parts);
            let same = got.shape() == want.shape()
                && got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(format!("{backend:?} rank {rank} trial {t}: result differs from the sequential sum"));
            }
        }
    }
    Ok(())
}

/// One randomized plan: the driver's predicted peak must bound every
/// measured high-water mark.
pub fn memory_bound(seed: u64) -> Result<(String, u64, u64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strategy = if rng.gen_bool(0.5) { Strategy::Cnmf } else { Strategy::Rnmf };
    let (m, n) = (rng.gen_range(8..160), rng.gen_range(8..160));
    let k = rng.gen_range(1..=6);
    let workers = rng.gen_range(1..=3);
    let (part, batch) = match strategy {
        Strategy::Cnmf => (n, m),
        Strategy::Rnmf => (m, n),
    };
    let workers = workers.min(part);
    let n_batches = rng.gen_range(1..=batch.min(8));
    let n_cb = rng.gen_range(1..=3);
    let sparse = rng.gen_bool(0.5);
    let a = if sparse {
        Matrix::Sparse(gen_sparse_random(m, n, rng.gen_range(0.02..0.5), seed).unwrap())
    } else {
        input(m, n, false, seed)
    };
    let (_dir, path) = write_temp(&a);
    let plan = make_plan(m, n, k, workers, n_batches, strategy).unwrap();
    let desc = format!("{strategy} {m}x{n} k={k} N={workers} n_B={n_batches} n_cb={n_cb} sparse={sparse}");
    let opts = DistOptions { store: StoreConfig { budget_bytes: u64::MAX, n_cb, prefetch: rng.gen_bool(0.5) }, check_replicas: false };
    let runs: Vec<DistRun> = run_local_group(Backend::Threads, &StoreSource::File(path), &short_config(k, 4), &plan, &opts)
        .map_err(|e| format!("{desc}: {e}"))?;
    let predicted = runs[0].memory.peak_bytes;
    let mut measured = 0;
    for r in &runs {
        let peak = r.result.counters.peak_tracked_bytes.max(r.store.peak_resident_bytes);
        measured = measured.max(peak);
        if peak > predicted || r.store.peak_resident_bytes > r.memory.batch_resident_bytes {
            return Err(format!(
                "{desc} rank {}: measured {} (resident {}) > predicted {} (resident {})",
                r.rank, peak, r.store.peak_resident_bytes, predicted, r.memory.batch_resident_bytes
            ));
        }
    }
    Ok((desc, predicted, measured))
}
