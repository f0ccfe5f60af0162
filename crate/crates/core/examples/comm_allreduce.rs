//! All-reduce over the thread and TCP backends. Sums are accumulated in
//! ascending rank order, so every backend returns the same bits.
//!
//! ```text
//! cargo run --release --example comm_allreduce
//! ```

use oocnmf::comm::{run_workers, spawn_group, tcp_local_group, Backend, PhaseTag, TcpConfig, DEFAULT_TIMEOUT};
use oocnmf::linalg::DenseMatrix;

fn contribution(rank: usize) -> DenseMatrix {
    DenseMatrix::from_fn(2, 3, |i, j| 0.1 * (rank + 1) as f64 + 1e-17 * (i * 3 + j) as f64)
}

fn main() -> oocnmf::Result<()> {
    let n = 4;
    let expected = (0..n).fold(DenseMatrix::zeros(2, 3), |mut acc, r| {
        for (a, b) in acc.data_mut().iter_mut().zip(contribution(r).data()) {
            *a += b;
        }
        acc
    });
    let groups = [
        ("threads", spawn_group(n, Backend::Threads, None, None, DEFAULT_TIMEOUT)?),
        ("tcp", tcp_local_group(n, &TcpConfig::default())?),
    ];
    for (name, handles) in groups {
        let out = run_workers(handles, |mut h| {
            let sum = h.all_reduce_sum(&contribution(h.rank()), PhaseTag::W_UPDATE)?;
            h.barrier()?;
            Ok((sum, h.stats().clone()))
        });
        for (rank, r) in out.into_iter().enumerate() {
            let (sum, stats) = r?;
            println!(
                "{name} rank {rank}: bitwise equal to rank-order sum: {}, {} calls, {} bytes",
                sum == expected,
                stats.calls,
                stats.bytes
            );
        }
    }
    Ok(())
}
