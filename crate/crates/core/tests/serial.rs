mod common;

use common::random_matrix;
use oocnmf::linalg::{frobenius_norm, relative_error};
use oocnmf::serial::{init_factors, nmf_serial, Init, NmfConfig};
use oocnmf::synth::{gen_lowrank, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn error_trace_is_monotone_over_random_inputs() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, 30, 25, seed % 2 == 0, 0.0);
        let cfg = NmfConfig { k: 1 + (seed as usize % 5), eta: 0.0, max_iters: 150, error_check_interval: 1, seed, ..NmfConfig::default() };
        let Ok(res) = nmf_serial(a.as_ref(), &cfg) else { continue };
        for w in res.error_trace.windows(2) {
            assert!(w[1].relative_error <= w[0].relative_error + 1e-10, "seed {seed}: {w:?}");
        }
        assert!(res.w.data().iter().chain(res.h.data()).all(|&v| v >= 0.0));
    }
}

#[test]
fn exact_factors_are_a_fixed_point() {
    let (a, w0, h0) = gen_lowrank(&SynthSpec::new(40, 30, 3, 2)).unwrap();
    let cfg = NmfConfig { k: 3, max_iters: 1, init: Init::Given { w: w0.clone(), h: h0.clone() }, ..NmfConfig::default() };
    let res = nmf_serial(a.as_ref(), &cfg).unwrap();
    let rel = |x: f64, y: f64| (x - y).abs() / y;
    assert!(rel(frobenius_norm(res.w.as_ref()), frobenius_norm(w0.as_ref())) < 1e-8);
    assert!(rel(frobenius_norm(res.h.as_ref()), frobenius_norm(h0.as_ref())) < 1e-8);
    assert!(res.final_error() <= 1e-12);
}

#[test]
fn reported_error_matches_a_fresh_residual() {
    let (a, _, _) = gen_lowrank(&SynthSpec::new(50, 40, 4, 3)).unwrap();
    let res = nmf_serial(a.as_ref(), &NmfConfig { k: 4, max_iters: 57, error_check_interval: 10, ..NmfConfig::default() }).unwrap();
    assert_eq!(res.error_trace.last().unwrap().iteration, 57);
    let fresh = relative_error(a.as_ref(), &res.w, &res.h).unwrap();
    assert!((fresh - res.final_error()).abs() <= 1e-12 * fresh);
}

#[test]
fn runs_are_reproducible() {
    let (a, _, _) = gen_lowrank(&SynthSpec::new(30, 20, 2, 5)).unwrap();
    let cfg = NmfConfig { k: 2, max_iters: 30, ..NmfConfig::default() };
    let (x, y) = (nmf_serial(a.as_ref(), &cfg).unwrap(), nmf_serial(a.as_ref(), &cfg).unwrap());
    assert_eq!((x.w, x.h, x.error_trace), (y.w, y.h, y.error_trace));
    let (w, _) = init_factors(30, 20, 2, cfg.seed);
    assert!(w.data().iter().all(|&v| (0.0..1.0).contains(&v)));
}
