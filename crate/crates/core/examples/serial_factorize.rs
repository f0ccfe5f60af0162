//! Factorizes a small synthetic low-rank matrix with the single-process
//! multiplicative-update solver and prints the error trace.
//!
//! ```text
//! cargo run --release --example serial_factorize
//! ```

use oocnmf::serial::{nmf_serial, NmfConfig};
use oocnmf::synth::{gen_lowrank, SynthSpec};

fn main() -> oocnmf::Result<()> {
    let (a, _, _) = gen_lowrank(&SynthSpec::new(100, 80, 4, 1))?;
    let cfg = NmfConfig { k: 4, eta: 1e-4, max_iters: 2000, error_check_interval: 100, ..NmfConfig::default() };
    let res = nmf_serial(a.as_ref(), &cfg)?;
    for s in &res.error_trace {
        println!("iter {:>5}  rel_err {:.3e}", s.iteration, s.relative_error);
    }
    println!(
        "converged={} after {} iterations; {:.3} s total ({:.3} s in W updates, {:.3} s in H updates)",
        res.converged, res.iterations_run, res.counters.total_s, res.counters.w_update_s, res.counters.h_update_s
    );
    Ok(())
}
