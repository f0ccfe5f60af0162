//! A small strong-scaling sweep: fixed problem, growing worker count, phase
//! breakdown per run. `oocnmf bench` writes the same rows as CSV.
//!
//! ```text
//! cargo run --release --example bench_sweep
//! ```

use oocnmf::cli::bench_rows;
use oocnmf::comm::Backend;
use oocnmf::distributed::{in_memory, run_local_group, DistOptions};
use oocnmf::partition::{make_plan, Strategy};
use oocnmf::serial::NmfConfig;
use oocnmf::synth::{gen_lowrank, SynthSpec};

fn main() -> oocnmf::Result<()> {
    let (m, n, k) = (600, 400, 8);
    let (a, _, _) = gen_lowrank(&SynthSpec::new(m, n, k, 3))?;
    let source = in_memory(a);
    let cfg = NmfConfig { k, max_iters: 30, eta: 0.0, ..NmfConfig::default() };
    println!("strategy,N,n_B,k,phase,seconds,bytes");
    for strategy in [Strategy::Cnmf, Strategy::Rnmf] {
        for workers in [1, 2, 4] {
            for batches in [1, 4] {
                let plan = make_plan(m, n, k, workers, batches, strategy)?;
                let runs = run_local_group(Backend::Threads, &source, &cfg, &plan, &DistOptions::default())?;
                for r in bench_rows(&runs[0], k) {
                    println!("{},{},{},{},{},{:.6},{}", r.strategy, r.n_workers, r.n_batches, r.k, r.phase, r.seconds, r.bytes);
                }
            }
        }
    }
    Ok(())
}
