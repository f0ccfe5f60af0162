mod common;

use common::scenarios::allreduce_determinism;
use oocnmf::comm::{run_workers, spawn_group, tcp_local_group, Backend, PhaseTag, TcpConfig, DEFAULT_TIMEOUT};
use oocnmf::linalg::DenseMatrix;
use oocnmf::Error;

#[test]
fn threads_allreduce_is_rank_ordered_under_delays() {
    allreduce_determinism(Backend::Threads, 4, 100, 7).unwrap();
}

#[test]
fn tcp_allreduce_is_rank_ordered_under_delays() {
    allreduce_determinism(Backend::Tcp, 4, 50, 8).unwrap();
}

#[test]
fn odd_group_sizes() {
    for n in [1, 2, 3, 5] {
        allreduce_determinism(Backend::Threads, n, 10, n as u64).unwrap();
        allreduce_determinism(Backend::Tcp, n, 10, n as u64).unwrap();
    }
}

#[test]
fn shape_mismatch_fails_every_rank() {
    for handles in [
        spawn_group(3, Backend::Threads, None, None, DEFAULT_TIMEOUT).unwrap(),
        tcp_local_group(3, &TcpConfig::default()).unwrap(),
    ] {
        let results = run_workers(handles, |mut h| {
            let cols = if h.rank() == 2 { 3 } else { 2 };
            h.all_reduce_sum(&DenseMatrix::zeros(1, cols), PhaseTag::W_UPDATE)
        });
        assert!(results.iter().all(|r| r.is_err()), "{results:?}");
    }
}

#[test]
fn a_failed_rank_poisons_the_group() {
    let handles = spawn_group(3, Backend::Threads, None, None, DEFAULT_TIMEOUT).unwrap();
    let results = run_workers(handles, |mut h| {
        if h.rank() == 1 {
            h.poison("disk on fire");
            return Err(Error::Io(std::io::Error::other("disk on fire")));
        }
        h.all_reduce_sum(&DenseMatrix::zeros(1, 1), PhaseTag::H_UPDATE)?;
        Ok(())
    });
    assert!(results.iter().all(|r| r.is_err()));
}

#[test]
fn stats_count_calls_and_bytes() {
    let handles = tcp_local_group(2, &TcpConfig::default()).unwrap();
    let results = run_workers(handles, |mut h| {
        h.all_reduce_sum(&DenseMatrix::zeros(3, 4), PhaseTag::W_UPDATE)?;
        h.all_reduce_sum(&DenseMatrix::zeros(1, 1), PhaseTag::ERROR_CHECK)?;
        Ok(h.take_stats())
    });
    for r in results {
        let s = r.unwrap();
        assert_eq!(s.calls, 2);
        assert_eq!(s.bytes, 13 * 8);
        assert_eq!(s.calls_for(PhaseTag::W_UPDATE), 1);
    }
}
