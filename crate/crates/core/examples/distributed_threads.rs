//! Runs the column- and row-partitioned solvers on four in-process workers
//! and compares them with the serial result.
//!
//! ```text
//! cargo run --release --example distributed_threads
//! ```

use oocnmf::comm::{Backend, PhaseTag};
use oocnmf::distributed::{in_memory, run_local_group, DistOptions};
use oocnmf::partition::{make_plan, Strategy};
use oocnmf::serial::{nmf_serial, NmfConfig};
use oocnmf::synth::{gen_lowrank, SynthSpec};

fn main() -> oocnmf::Result<()> {
    let (a, _, _) = gen_lowrank(&SynthSpec::new(240, 160, 5, 2))?;
    let cfg = NmfConfig { k: 5, max_iters: 200, eta: 0.0, ..NmfConfig::default() };
    let serial = nmf_serial(a.as_ref(), &cfg)?;
    let source = in_memory(a.clone());
    for strategy in [Strategy::Cnmf, Strategy::Rnmf] {
        let plan = make_plan(240, 160, 5, 4, 2, strategy)?;
        let runs = run_local_group(Backend::Threads, &source, &cfg, &plan, &DistOptions::default())?;
        let r0 = &runs[0].result;
        let stats = &r0.collectives;
        println!(
            "{strategy}: final error {:.6e} (serial {:.6e}), W diff {:.2e}, H diff {:.2e}",
            r0.final_error(),
            serial.final_error(),
            r0.w.relative_diff(&serial.w),
            r0.h.relative_diff(&serial.h)
        );
        println!(
            "  collectives: {} w_update, {} h_update, {} error_check, {} bytes total",
            stats.calls_for(PhaseTag::W_UPDATE),
            stats.calls_for(PhaseTag::H_UPDATE),
            stats.calls_for(PhaseTag::ERROR_CHECK),
            stats.bytes
        );
    }
    Ok(())
}
