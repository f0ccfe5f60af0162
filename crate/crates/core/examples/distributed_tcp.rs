//! Three workers talking over real loopback sockets. Each worker runs on its
//! own thread here; `oocnmf factorize --spawn-local 3` does the same with
//! separate processes.
//!
//! ```text
//! cargo run --release --example distributed_tcp
//! ```

use oocnmf::comm::Backend;
use oocnmf::distributed::{in_memory, run_local_group, DistOptions};
use oocnmf::linalg::Matrix;
use oocnmf::partition::{make_plan, Strategy};
use oocnmf::serial::NmfConfig;
use oocnmf::synth::gen_sparse_random;

fn main() -> oocnmf::Result<()> {
    let a = Matrix::Sparse(gen_sparse_random(300, 120, 0.1, 9)?);
    let cfg = NmfConfig { k: 6, max_iters: 50, eta: 0.0, ..NmfConfig::default() };
    let plan = make_plan(300, 120, 6, 3, 2, Strategy::Rnmf)?;
    let runs = run_local_group(Backend::Tcp, &in_memory(a), &cfg, &plan, &DistOptions::default())?;
    for r in &runs {
        println!(
            "rank {}: rows {:?}, final error {:.6e}, {} collectives, {:.4} s in allreduce",
            r.rank,
            plan.worker(r.rank).a_rows,
            r.result.final_error(),
            r.result.collectives.calls,
            r.result.counters.allreduce_s
        );
    }
    assert!(runs.iter().all(|r| r.result.w == runs[0].result.w));
    println!("all ranks hold identical factors");
    Ok(())
}
