use std::path::Path;
use std::process::{Command, Output};

fn oocnmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oocnmf")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).expect("stderr is one JSON object")
}

#[test]
fn gen_factorize_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pdn");
    let o = oocnmf(&["gen", "--m", "60", "--n", "40", "--k-true", "3", "--seed", "1", "--out", s(&a), "--truth"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("a.W0.pdn").exists());

    let out = dir.path().join("run");
    let o = oocnmf(&[
        "factorize", "--input", s(&a), "--k", "3", "--max-iters", "50", "--workers", "2", "--batches", "2",
        "--out-of-core", "--budget", "100000", "--prefetch", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["W.pdn", "H.pdn", "error_trace.csv", "rank0.json", "rank1.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["iterations"], 50);
    assert_eq!(summary["error_metric"], "||A - WH||_F / ||A||_F");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("rank1.json")).unwrap()).unwrap();
    assert!(report["store"]["peak_resident_bytes"].as_u64().unwrap() <= 100_000);

    let again = dir.path().join("again");
    let o = oocnmf(&["replay", s(&out.join("manifest.json")), "--out", s(&again)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(out.join("W.pdn")).unwrap(), std::fs::read(again.join("W.pdn")).unwrap());
}

#[test]
fn spawn_local_matches_threads() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.mtx");
    assert_eq!(code(&oocnmf(&["gen", "--m", "30", "--n", "50", "--density", "0.3", "--sparse-random", "--out", s(&a)])), 0);
    let (t, p) = (dir.path().join("t"), dir.path().join("p"));
    let common = ["factorize", "--input", s(&a), "--k", "2", "--max-iters", "20", "--strategy", "rnmf"];
    let o = oocnmf(&[&common[..], &["--workers", "3", "--out", s(&t)]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = oocnmf(&[&common[..], &["--spawn-local", "3", "--out", s(&p)]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(t.join("W.pdn")).unwrap(), std::fs::read(p.join("W.pdn")).unwrap());
    assert!(p.join("rank2.json").exists());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["invocation"]["spawn_local"], 3);
}

#[test]
fn dump_plan_prints_the_memory_model() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pdn");
    assert_eq!(code(&oocnmf(&["gen", "--m", "200", "--n", "100", "--k-true", "2", "--out", s(&a)])), 0);
    let o = oocnmf(&["factorize", "--input", s(&a), "--k", "4", "--workers", "2", "--budget", "60000", "--dump-plan"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["plan"]["n_batches"].as_u64().unwrap() > 1);
    assert!(v["memory"]["peak_bytes"].as_u64().unwrap() <= 60_000);
}

#[test]
fn select_k_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pdn");
    assert_eq!(code(&oocnmf(&["gen", "--m", "80", "--n", "40", "--k-true", "2", "--out", s(&a)])), 0);
    let out = dir.path().join("sel");
    let o = oocnmf(&[
        "select-k", "--input", s(&a), "--k-min", "1", "--k-max", "3", "--perturbations", "4", "--max-iters", "200",
        "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("selection.json").exists() && out.join("selection.csv").exists());
    let o = oocnmf(&["select-k", "--input", s(&a), "--k-min", "1", "--k-max", "1", "--perturbations", "2", "--max-iters", "20", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = oocnmf(&["select-k", "--input", s(&a), "--k-min", "3", "--k-max", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bench_writes_long_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let o = oocnmf(&[
        "bench", "--m", "64", "--n", "48", "--k", "2,4", "--workers", "1,2", "--batches", "1,3", "--strategies", "cnmf,rnmf",
        "--iters", "3", "--out", s(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "strategy,N,n_B,k,phase,seconds,bytes");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 2 * 2 * 2 * 2 * 6);
    for run in rows.chunks(6) {
        let secs: Vec<f64> = run.iter().map(|r| r[5].parse().unwrap()).collect();
        assert_eq!(run[5][4], "total");
        assert!(secs[..5].iter().sum::<f64>() <= secs[5] * 1.05, "{run:?}");
    }
    assert_eq!(code(&oocnmf(&["bench", "--m", "20", "--n", "20", "--k", "2", "--workers", "1,2", "--iters", "2"])), 0);
}

#[test]
fn thread_workers_match_a_single_worker() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pdn");
    assert_eq!(code(&oocnmf(&["gen", "--m", "40", "--n", "70", "--k-true", "3", "--noise", "0.1", "--out", s(&a)])), 0);
    let read = |d: &Path| oocnmf::linalg::io::read_matrix(d).unwrap().to_dense();
    let mut outs = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(workers);
        let o = oocnmf(&["factorize", "--input", s(&a), "--k", "3", "--max-iters", "60", "--workers", workers, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(out);
    }
    for f in ["W.pdn", "H.pdn"] {
        assert!(read(&outs[1].join(f)).relative_diff(&read(&outs[0].join(f))) <= 1e-8, "{f}");
    }
    let traces: Vec<String> = outs.iter().map(|o| std::fs::read_to_string(o.join("error_trace.csv")).unwrap()).collect();
    for (x, y) in traces[0].lines().zip(traces[1].lines()).skip(1) {
        let (ex, ey): (f64, f64) = (x.split(',').nth(1).unwrap().parse().unwrap(), y.split(',').nth(1).unwrap().parse().unwrap());
        assert!((ex - ey).abs() <= 1e-8 * ex);
    }
}

#[test]
fn usage_errors_exit_two() {
    let o = oocnmf(&["factorize", "--k", "2"]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr_json(&o)["exit_code"], 2);
    let o = oocnmf(&["factorize", "--input", "/no/such/file.pdn", "--k", "2"]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr_json(&o)["error"], "usage");
    assert_eq!(code(&oocnmf(&["bench", "--k", ""])), 2);
    assert_eq!(code(&oocnmf(&["frobnicate"])), 2);
    assert_eq!(code(&oocnmf(&["gen", "--m", "0", "--n", "3", "--out", "/tmp/x.pdn"])), 2);
}

#[test]
fn runtime_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pdn");
    std::fs::write(&bad, b"not a matrix at all, just bytes").unwrap();
    let o = oocnmf(&["factorize", "--input", s(&bad), "--k", "2"]);
    assert_eq!(code(&o), 3);
    assert_eq!(stderr_json(&o)["exit_code"], 3);

    let a = dir.path().join("a.pdn");
    assert_eq!(code(&oocnmf(&["gen", "--m", "50", "--n", "50", "--k-true", "2", "--out", s(&a)])), 0);
    let o = oocnmf(&["factorize", "--input", s(&a), "--k", "2", "--budget", "1000", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
