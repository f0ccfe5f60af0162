//! Writes a matrix to disk and factorizes it under a per-worker memory
//! budget, so batches are streamed from the file instead of held in memory.
//!
//! ```text
//! cargo run --release --example out_of_core
//! ```

use oocnmf::comm::Backend;
use oocnmf::distributed::{plan_for_budget, run_local_group, DistOptions};
use oocnmf::linalg::io::write_pdn1;
use oocnmf::partition::Strategy;
use oocnmf::serial::NmfConfig;
use oocnmf::store::{StoreConfig, StoreSource};
use oocnmf::synth::{gen_lowrank, SynthSpec};

fn main() -> oocnmf::Result<()> {
    let dir = std::env::temp_dir().join(format!("oocnmf-ooc-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("a.pdn");
    let (m, n, k) = (800, 300, 6);
    let (a, _, _) = gen_lowrank(&SynthSpec::new(m, n, k, 5))?;
    write_pdn1(&path, a.as_ref())?;
    println!("A is {} bytes on disk", std::fs::metadata(&path)?.len());

    let cfg = NmfConfig { k, max_iters: 40, eta: 0.0, ..NmfConfig::default() };
    for budget in [u64::MAX, 1_200_000, 600_000] {
        let plan = plan_for_budget(m, n, k, 2, Strategy::Cnmf, 1.0, 2, budget)?;
        let opts = DistOptions {
            store: StoreConfig { budget_bytes: budget, n_cb: 2, prefetch: true },
            check_replicas: false,
        };
        let runs = run_local_group(Backend::Threads, &StoreSource::File(path.clone()), &cfg, &plan, &opts)?;
        let r = &runs[0];
        println!(
            "budget {:>20}: n_B={:<2} error {:.6e}, peak resident {} B, peak tracked {} B, predicted {} B, {} loads, {} B read",
            budget,
            plan.n_batches,
            r.result.final_error(),
            r.store.peak_resident_bytes,
            r.result.counters.peak_tracked_bytes,
            r.memory.peak_bytes,
            r.store.loads,
            r.store.bytes_read
        );
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
