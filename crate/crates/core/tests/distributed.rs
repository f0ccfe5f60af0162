mod common;

use common::scenarios::*;
use oocnmf::comm::Backend;
use oocnmf::distributed::{in_memory, nmf_distributed, run_local_group, DistOptions};
use oocnmf::partition::{make_plan, Strategy};
use oocnmf::serial::{nmf_serial, Init, NmfConfig};
use oocnmf::store::StoreConfig;
use oocnmf::Error;

#[test]
fn distributed_matches_serial_over_threads() {
    equivalence_grid(&[Backend::Threads]).unwrap();
}

#[test]
fn distributed_matches_serial_over_tcp() {
    equivalence_grid(&[Backend::Tcp]).unwrap();
}

#[test]
fn single_worker_is_bitwise_serial() {
    let a = input(50, 40, false, 1);
    let cfg = short_config(3, 12);
    let serial = nmf_serial(a.as_ref(), &cfg).unwrap();
    for strategy in [Strategy::Cnmf, Strategy::Rnmf] {
        let plan = make_plan(50, 40, 3, 1, 1, strategy).unwrap();
        let mut h = oocnmf::comm::CommHandle::loopback();
        let run = nmf_distributed(&in_memory(a.clone()), &cfg, &plan, &mut h, &DistOptions::default()).unwrap();
        assert_eq!(run.result.w, serial.w, "{strategy}");
        assert_eq!(run.result.h, serial.h, "{strategy}");
        assert_eq!(run.result.error_trace, serial.error_trace);
    }
}

#[test]
fn out_of_core_matches_in_core() {
    for strategy in [Strategy::Cnmf, Strategy::Rnmf] {
        for nb in [2, 8] {
            for sparse in [false, true] {
                out_of_core(strategy, nb, sparse).unwrap();
            }
        }
    }
}

#[test]
fn collective_counts_and_shapes() {
    for strategy in [Strategy::Cnmf, Strategy::Rnmf] {
        for workers in [1, 2, 3] {
            for nb in [1, 2, 5] {
                communication(strategy, workers, nb).unwrap();
            }
        }
    }
}

#[test]
fn predicted_memory_bounds_measured() {
    for seed in 0..10 {
        memory_bound(seed).unwrap();
    }
}

#[test]
fn budget_too_small_is_rejected_on_every_rank() {
    let a = input(60, 60, false, 2);
    let plan = make_plan(60, 60, 4, 2, 1, Strategy::Cnmf).unwrap();
    let run = |budget| {
        let opts = DistOptions { store: StoreConfig { budget_bytes: budget, n_cb: 1, prefetch: false }, check_replicas: false };
        run_local_group(Backend::Threads, &in_memory(a.clone()), &short_config(4, 3), &plan, &opts).unwrap_err()
    };
    // fits with more batches, so the error names the batch count to use
    let err = run(20_000);
    assert!(matches!(err, Error::Budget(_)), "{err}");
    // no batch count fits at all
    let err = run(4096);
    assert!(matches!(err, Error::Infeasible(_)), "{err}");
}

#[test]
fn given_initial_factors_are_sliced_per_rank() {
    let a = input(40, 30, true, 4);
    let (w, h) = oocnmf::serial::init_factors(40, 30, 3, 99);
    let cfg = NmfConfig { init: Init::Given { w, h }, ..short_config(3, 8) };
    let serial = nmf_serial(a.as_ref(), &cfg).unwrap();
    for strategy in [Strategy::Cnmf, Strategy::Rnmf] {
        let plan = make_plan(40, 30, 3, 3, 2, strategy).unwrap();
        let runs = run_local_group(Backend::Threads, &in_memory(a.clone()), &cfg, &plan, &DistOptions::default()).unwrap();
        compare_traces(&runs[0].result, &serial, TRACE_TOL).unwrap();
        compare_factors(&runs[0].result, &serial, FACTOR_TOL).unwrap();
    }
}
