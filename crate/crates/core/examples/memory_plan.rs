//! Prints partition plans and their predicted per-worker memory for a matrix
//! too large to factorize here, and the batch count each budget requires.
//!
//! ```text
//! cargo run --release --example memory_plan
//! ```

use oocnmf::partition::{choose_strategy, make_plan, memory_estimate};

fn main() -> oocnmf::Result<()> {
    let (m, n, k, workers) = (2_000_000, 50_000, 32, 16);
    let strategy = choose_strategy(m, n);
    println!("{m}x{n}, k={k}, {workers} workers -> {strategy}");
    for (label, density) in [("dense", 1.0), ("sparse 1e-3", 1e-3)] {
        for budget_gb in [64u64, 8, 1] {
            let budget = budget_gb << 30;
            let probe = make_plan(m, n, k, workers, 1, strategy)?;
            let est = memory_estimate(&probe, density, 2, budget)?;
            let plan = make_plan(m, n, k, workers, est.min_batches, strategy)?;
            let fitted = memory_estimate(&plan, density, 2, budget)?;
            println!(
                "  {label:<12} budget {budget_gb:>3} GiB: n_B={:<6} peak {:>8.3} GiB (batch {:.3} GiB, factors {:.3} GiB) fits={}",
                plan.n_batches,
                fitted.peak_bytes as f64 / (1u64 << 30) as f64,
                fitted.a_batch_bytes as f64 / (1u64 << 30) as f64,
                fitted.factor_bytes as f64 / (1u64 << 30) as f64,
                fitted.fits()
            );
        }
    }
    let small = make_plan(10, 8, 2, 2, 2, strategy)?;
    println!("{}", small.to_json()?);
    Ok(())
}
