//! Generates the synthetic inputs: a low-rank product of Gaussian bumps, a
//! noisy and thinned variant, and a random sparse matrix.
//!
//! ```text
//! cargo run --release --example synth_data
//! ```

use oocnmf::linalg::frobenius_norm;
use oocnmf::synth::{gen_lowrank, gen_sparse_random, FeatureKind, SynthSpec};

fn main() -> oocnmf::Result<()> {
    let spec = SynthSpec::new(60, 40, 3, 0);
    let (a, w0, h0) = gen_lowrank(&spec)?;
    println!("clean: {:?}, ||A||_F = {:.4}, W0 {:?}, H0 {:?}", a.shape(), frobenius_norm(a.as_ref()), w0.shape(), h0.shape());
    for i in (0..60).step_by(6) {
        let row: Vec<String> = (0..3).map(|c| format!("{:.3}", w0.get(i, c))).collect();
        println!("  W0[{i:>2}] = [{}]", row.join(", "));
    }

    let noisy = SynthSpec { noise: Some(0.05), density: Some(0.3), feature_kind: FeatureKind::Uniform, ..spec };
    let (b, _, _) = gen_lowrank(&noisy)?;
    println!("noisy+thinned: sparse={} density={:.3}", b.is_sparse(), b.density());

    let s = gen_sparse_random(10_000, 5_000, 1e-3, 7)?;
    println!("random sparse: {:?} nnz={} ({} bytes as CSR)", s.shape(), s.nnz(), s.nbytes());
    Ok(())
}
