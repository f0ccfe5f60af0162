//! The `oocnmf` command line: `gen`, `factorize`, `select-k`, `bench` and
//! `replay`.
//!
//! Exit codes are 0 on success, 2 for usage errors (bad flags, invalid
//! configuration, missing input) and 3 for runtime failures. Failures print
//! one JSON object to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::comm::{spawn_group, Backend, DEFAULT_TIMEOUT};
use crate::distributed::{nmf_distributed, plan_for_budget, run_local_group, DistOptions, DistRun};
use crate::error::{Error, Result};
use crate::linalg::io::{read_matrix, write_matrix, write_pdn1, Pdn1Reader};
use crate::linalg::Matrix;
use crate::partition::{choose_strategy, make_plan, memory_estimate, PartitionPlan, Strategy};
use crate::select::{csv_err, select_k, DistributedRunner, NmfRunner, SelectionConfig, SerialRunner};
use crate::serial::{Init, NmfConfig};
use crate::store::{StoreConfig, StoreSource};
use crate::synth::{gen_lowrank, gen_sparse_random, FeatureKind, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// How every reported relative error is normalized.
pub const ERROR_METRIC: &str = "||A - WH||_F / ||A||_F";

/// Set on processes started by `--spawn-local`.
const SPAWNED_ENV: &str = "OOCNMF_SPAWNED_RANK";

#[derive(Debug, Parser)]
#[command(name = "oocnmf", version, about = "Distributed, out-of-core NMF")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Cmd {
    /// Generate a synthetic matrix.
    Gen(GenArgs),
    /// Factorize a matrix.
    Factorize(FactorizeArgs),
    /// Estimate the number of latent features.
    SelectK(SelectArgs),
    /// Time the phases of distributed runs over a sweep.
    Bench(BenchArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    /// Latent rank of the product; ignored with --sparse-random.
    #[arg(long, default_value_t = 1)]
    pub k_true: usize,
    #[arg(long, default_value = "gaussian_bumps")]
    pub features: String,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub density: Option<f64>,
    /// Random sparse matrix instead of a low-rank product (needs --density).
    #[arg(long)]
    pub sparse_random: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; `.mtx` selects Matrix Market, anything else PDN1.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ground-truth factors W0/H0 next to the output.
    #[arg(long)]
    pub truth: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FactorizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub eta: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 10)]
    pub check_interval: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value = "threads")]
    pub backend: String,
    /// This process's rank (tcp backend).
    #[arg(long)]
    pub rank: Option<usize>,
    /// Comma-separated host:port list, one per rank; rank 0 listens on the first.
    #[arg(long, value_delimiter = ',')]
    pub peers: Option<Vec<String>>,
    /// Launch N local processes over tcp loopback and wait for them.
    #[arg(long)]
    pub spawn_local: Option<usize>,
    /// Per-worker memory budget in bytes; picks the batch count if --batches is absent.
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub batches: Option<usize>,
    /// Concurrent batch cap of the out-of-core store.
    #[arg(long, default_value_t = 2)]
    pub n_cb: usize,
    #[arg(long, default_value = "auto")]
    pub strategy: String,
    #[arg(long)]
    pub prefetch: bool,
    /// Stage batches from the file instead of loading A into memory (PDN1 only).
    #[arg(long)]
    pub out_of_core: bool,
    #[arg(long)]
    pub check_replicas: bool,
    #[arg(long)]
    pub init_w: Option<PathBuf>,
    #[arg(long)]
    pub init_h: Option<PathBuf>,
    /// Print the partition plan and memory estimate, then exit.
    #[arg(long)]
    pub dump_plan: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs())]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub k_min: usize,
    #[arg(long)]
    pub k_max: usize,
    #[arg(long, default_value_t = 16)]
    pub perturbations: usize,
    #[arg(long, default_value_t = 0.03)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.75)]
    pub sil_threshold: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub eta: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 25)]
    pub check_interval: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value = "threads")]
    pub backend: String,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
    #[arg(long, default_value = "auto")]
    pub strategy: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Benchmark on this file instead of a generated matrix.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub m: usize,
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    /// Density of a generated sparse input; dense low-rank data when absent.
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub workers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub batches: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "cnmf")]
    pub strategies: Vec<String>,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value = "threads")]
    pub backend: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything needed to re-run a job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub invocation: Cmd,
    pub outputs: Vec<PathBuf>,
    pub started_unix_s: f64,
    pub wall_s: f64,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(msg) => CliError::Usage(msg),
            other => CliError::Run(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn error_json(kind: &str, message: &str, code: i32) -> String {
    serde_json::json!({ "error": kind, "message": message, "exit_code": code }).to_string()
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim(), EXIT_USAGE));
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("{}", error_json("usage", &msg, EXIT_USAGE));
            EXIT_USAGE
        }
        Err(CliError::Run(e)) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string(), EXIT_RUNTIME));
            EXIT_RUNTIME
        }
    }
}

/// Sets up logging from `OOCNMF_LOG` (error|warn|info|debug; default warn).
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("OOCNMF_LOG", "warn"))
        .format_timestamp_millis()
        .try_init();
}

fn dispatch(cmd: Cmd) -> CliResult<()> {
    let started = Instant::now();
    let started_unix_s = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64());
    let (outputs, out_dir) = match &cmd {
        Cmd::Gen(a) => (cmd_gen(a)?, None),
        Cmd::Factorize(a) => (cmd_factorize(a)?, Some(a.out.clone())),
        Cmd::SelectK(a) => (cmd_select_k(a)?, Some(a.out.clone())),
        Cmd::Bench(a) => (cmd_bench(a)?, None),
        Cmd::Replay(a) => return cmd_replay(a),
    };
    // Worker processes of a tcp job share the directory; rank 0 writes the
    // manifest, or the launcher when the ranks were spawned locally.
    let spawned = std::env::var_os(SPAWNED_ENV).is_some();
    let is_leaf = matches!(&cmd, Cmd::Factorize(a) if a.rank.is_some_and(|r| r > 0) || spawned || a.dump_plan);
    if let Some(dir) = out_dir.filter(|_| !is_leaf) {
        let manifest = RunManifest {
            version: format!("oocnmf {}", env!("CARGO_PKG_VERSION")),
            invocation: cmd.clone(),
            outputs,
            started_unix_s,
            wall_s: started.elapsed().as_secs_f64(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest).map_err(Error::from)?)?;
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_replay(a: &ReplayArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.manifest)
        .map_err(|e| usage(format!("cannot read manifest {}: {e}", a.manifest.display())))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| usage(format!("bad manifest: {e}")))?;
    let mut cmd = manifest.invocation;
    if let Some(out) = &a.out {
        match &mut cmd {
            Cmd::Factorize(f) => f.out = out.clone(),
            Cmd::SelectK(s) => s.out = out.clone(),
            Cmd::Bench(b) => b.out = Some(out.clone()),
            Cmd::Gen(g) => g.out = out.clone(),
            Cmd::Replay(_) => return Err(usage("manifest records a replay")),
        }
    }
    if matches!(cmd, Cmd::Replay(_)) {
        return Err(usage("manifest records a replay"));
    }
    dispatch(cmd)
}

fn require_file(p: &Path) -> CliResult<()> {
    if !p.is_file() {
        return Err(usage(format!("input file {} does not exist", p.display())));
    }
    Ok(())
}

fn is_pdn1(p: &Path) -> bool {
    !p.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx"))
}

fn parse_strategy(s: &str, m: usize, n: usize) -> CliResult<Strategy> {
    if s == "auto" {
        Ok(choose_strategy(m, n))
    } else {
        Ok(s.parse()?)
    }
}

fn cmd_gen(a: &GenArgs) -> CliResult<Vec<PathBuf>> {
    let mut outputs = vec![a.out.clone()];
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    if a.sparse_random {
        let d = a.density.ok_or_else(|| usage("--sparse-random needs --density"))?;
        let s = gen_sparse_random(a.m, a.n, d, a.seed)?;
        write_matrix(&a.out, s.as_ref())?;
        return Ok(outputs);
    }
    let spec = SynthSpec {
        m: a.m,
        n: a.n,
        k_true: a.k_true,
        feature_kind: a.features.parse::<FeatureKind>()?,
        noise: a.noise,
        density: a.density,
        seed: a.seed,
    };
    let (m, w0, h0) = gen_lowrank(&spec)?;
    write_matrix(&a.out, m.as_ref())?;
    if a.truth {
        let stem = a.out.with_extension("");
        for (suffix, f) in [("W0", &w0), ("H0", &h0)] {
            let p = PathBuf::from(format!("{}.{suffix}.pdn", stem.display()));
            write_pdn1(&p, f.as_ref())?;
            outputs.push(p);
        }
    }
    Ok(outputs)
}

fn load_init(a: &FactorizeArgs) -> CliResult<Init> {
    match (&a.init_w, &a.init_h) {
        (None, None) => Ok(Init::Uniform01),
        (Some(w), Some(h)) => {
            require_file(w)?;
            require_file(h)?;
            Ok(Init::Given {
                w: read_matrix(w)?.to_dense(),
                h: read_matrix(h)?.to_dense(),
            })
        }
        _ => Err(usage("--init-w and --init-h must be given together")),
    }
}

/// Shape and worst-case density of the input without loading it.
fn probe(input: &Path) -> CliResult<(usize, usize, bool, usize)> {
    if is_pdn1(input) {
        let r = Pdn1Reader::open(input)?;
        let (m, n) = r.shape();
        Ok((m, n, r.is_sparse(), r.nnz()))
    } else {
        let a = read_matrix(input)?;
        let (m, n) = a.shape();
        let stored = a.as_ref().stored();
        Ok((m, n, a.is_sparse(), stored))
    }
}

fn build_plan(a: &FactorizeArgs) -> CliResult<(PartitionPlan, StoreConfig, f64)> {
    let (m, n, sparse, stored) = probe(&a.input)?;
    let strategy = parse_strategy(&a.strategy, m, n)?;
    let density = if sparse {
        (stored as f64 / (m * n) as f64).clamp(1e-12, 1.0 - 1e-12)
    } else {
        1.0
    };
    let budget = a.budget.unwrap_or(u64::MAX);
    let plan = match a.batches {
        Some(nb) => make_plan(m, n, a.k, a.workers, nb, strategy)?,
        None if a.budget.is_some() => plan_for_budget(m, n, a.k, a.workers, strategy, density, a.n_cb, budget)?,
        None => make_plan(m, n, a.k, a.workers, 1, strategy)?,
    };
    let store = StoreConfig {
        budget_bytes: budget,
        n_cb: a.n_cb,
        prefetch: a.prefetch,
    };
    Ok((plan, store, density))
}

fn write_trace_csv(path: &Path, run: &DistRun) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["iteration", "relative_error"]).map_err(csv_err)?;
    for s in &run.result.error_trace {
        w.write_record([s.iteration.to_string(), s.relative_error.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_rank_outputs(dir: &Path, runs: &[DistRun], write_factors: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for r in runs {
        let p = dir.join(format!("rank{}.json", r.rank));
        fs::write(&p, r.report_json()?)?;
        out.push(p);
    }
    if write_factors {
        let r0 = &runs[0];
        for (name, f) in [("W.pdn", &r0.result.w), ("H.pdn", &r0.result.h)] {
            let p = dir.join(name);
            write_pdn1(&p, f.as_ref())?;
            out.push(p);
        }
        let p = dir.join("error_trace.csv");
        write_trace_csv(&p, r0)?;
        out.push(p);
    }
    Ok(out)
}

fn free_local_ports(n: usize) -> Result<Vec<String>> {
    // Hold all listeners until every port is known so none is handed out twice.
    let listeners: Vec<TcpListener> = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<_>>()?;
    listeners
        .iter()
        .map(|l| Ok(l.local_addr()?.to_string()))
        .collect()
}

fn spawn_local(a: &FactorizeArgs, n: usize) -> CliResult<Vec<PathBuf>> {
    if a.rank.is_some() || a.peers.is_some() {
        return Err(usage("--spawn-local cannot be combined with --rank/--peers"));
    }
    let peers = free_local_ports(n)?.join(",");
    let exe = std::env::current_exe()?;
    let mut children = Vec::with_capacity(n);
    for rank in 0..n {
        let mut child = a.clone();
        child.spawn_local = None;
        child.workers = n;
        child.backend = "tcp".into();
        child.rank = Some(rank);
        child.peers = Some(peers.split(',').map(String::from).collect());
        let argv = factorize_argv(&child);
        children.push(Command::new(&exe).args(&argv).env(SPAWNED_ENV, rank.to_string()).spawn()?);
        if rank == 0 {
            // give the root a moment to bind before leaves dial in
            std::thread::sleep(Duration::from_millis(50));
        }
    }
    let mut worst = 0;
    for mut c in children {
        let code = c.wait()?.code().unwrap_or(EXIT_RUNTIME);
        worst = worst.max(code);
    }
    if worst != 0 {
        return Err(CliError::Run(Error::Comm(format!("a worker process exited with code {worst}"))));
    }
    let mut outputs: Vec<PathBuf> = (0..n).map(|r| a.out.join(format!("rank{r}.json"))).collect();
    outputs.extend(["W.pdn", "H.pdn", "error_trace.csv"].map(|f| a.out.join(f)));
    Ok(outputs)
}

/// Command-line arguments that reproduce `a` as a `factorize` invocation.
pub fn factorize_argv(a: &FactorizeArgs) -> Vec<String> {
    let mut v: Vec<String> = vec![
        "factorize".into(),
        "--input".into(),
        a.input.display().to_string(),
        "--k".into(),
        a.k.to_string(),
        "--eta".into(),
        a.eta.to_string(),
        "--max-iters".into(),
        a.max_iters.to_string(),
        "--check-interval".into(),
        a.check_interval.to_string(),
        "--epsilon".into(),
        a.epsilon.to_string(),
        "--seed".into(),
        a.seed.to_string(),
        "--workers".into(),
        a.workers.to_string(),
        "--backend".into(),
        a.backend.clone(),
        "--n-cb".into(),
        a.n_cb.to_string(),
        "--strategy".into(),
        a.strategy.clone(),
        "--out".into(),
        a.out.display().to_string(),
        "--timeout-secs".into(),
        a.timeout_secs.to_string(),
    ];
    let mut opt = |flag: &str, val: Option<String>| {
        if let Some(val) = val {
            v.push(flag.into());
            v.push(val);
        }
    };
    opt("--rank", a.rank.map(|r| r.to_string()));
    opt("--peers", a.peers.as_ref().map(|p| p.join(",")));
    opt("--spawn-local", a.spawn_local.map(|n| n.to_string()));
    opt("--budget", a.budget.map(|b| b.to_string()));
    opt("--batches", a.batches.map(|b| b.to_string()));
    opt("--init-w", a.init_w.as_ref().map(|p| p.display().to_string()));
    opt("--init-h", a.init_h.as_ref().map(|p| p.display().to_string()));
    for (flag, on) in [
        ("--prefetch", a.prefetch),
        ("--out-of-core", a.out_of_core),
        ("--check-replicas", a.check_replicas),
        ("--dump-plan", a.dump_plan),
    ] {
        if on {
            v.push(flag.into());
        }
    }
    v
}

fn cmd_factorize(a: &FactorizeArgs) -> CliResult<Vec<PathBuf>> {
    require_file(&a.input)?;
    let backend: Backend = a.backend.parse()?;
    if let Some(n) = a.spawn_local {
        return spawn_local(a, n);
    }
    if a.out_of_core && !is_pdn1(&a.input) {
        return Err(usage("--out-of-core needs a PDN1 input"));
    }
    let (plan, store, density) = build_plan(a)?;
    if a.dump_plan {
        let report = memory_estimate(&plan, density, store.n_cb, store.budget_bytes)?;
        let out = serde_json::json!({ "plan": plan, "memory": report });
        println!("{}", serde_json::to_string_pretty(&out).map_err(Error::from)?);
        return Ok(Vec::new());
    }
    let cfg = NmfConfig {
        k: a.k,
        eta: a.eta,
        max_iters: a.max_iters,
        error_check_interval: a.check_interval,
        epsilon: a.epsilon,
        seed: a.seed,
        init: load_init(a)?,
    };
    cfg.validate()?;
    let source = if a.out_of_core {
        StoreSource::File(a.input.clone())
    } else {
        crate::distributed::in_memory(read_matrix(&a.input)?)
    };
    let opts = DistOptions {
        store,
        check_replicas: a.check_replicas,
    };
    let timeout = Duration::from_secs(a.timeout_secs);
    let runs = match backend {
        Backend::Tcp => {
            let peers = a.peers.as_deref().ok_or_else(|| usage("tcp backend needs --peers"))?;
            let rank = a.rank.ok_or_else(|| usage("tcp backend needs --rank"))?;
            let mut handles = spawn_group(a.workers, Backend::Tcp, Some(peers), Some(rank), timeout)?;
            let mut h = handles.pop().expect("one handle per process");
            vec![nmf_distributed(&source, &cfg, &plan, &mut h, &opts)?]
        }
        other => run_local_group(other, &source, &cfg, &plan, &opts)?,
    };
    let write_factors = runs[0].rank == 0;
    let outputs = write_rank_outputs(&a.out, &runs, write_factors)?;
    if write_factors {
        let r = &runs[0].result;
        let summary = serde_json::json!({
            "iterations": r.iterations_run,
            "converged": r.converged,
            "final_error": r.final_error(),
            "error_metric": ERROR_METRIC,
            "strategy": plan.strategy,
            "batches": plan.n_batches,
        });
        println!("{summary}");
    }
    Ok(outputs)
}

fn cmd_select_k(a: &SelectArgs) -> CliResult<Vec<PathBuf>> {
    require_file(&a.input)?;
    let input = read_matrix(&a.input)?;
    let (m, n) = input.shape();
    let cfg = SelectionConfig {
        k_min: a.k_min,
        k_max: a.k_max,
        n_perturbations: a.perturbations,
        delta: a.delta,
        sil_threshold: a.sil_threshold,
        nmf: NmfConfig {
            eta: a.eta,
            max_iters: a.max_iters,
            error_check_interval: a.check_interval,
            ..NmfConfig::default()
        },
        seed: a.seed,
    };
    cfg.validate(m, n)?;
    let strategy = if a.strategy == "auto" { None } else { Some(parse_strategy(&a.strategy, m, n)?) };
    let backend: Backend = a.backend.parse()?;
    let runner: Box<dyn NmfRunner> = if a.workers == 1 && a.batches == 1 {
        Box::new(SerialRunner)
    } else {
        Box::new(DistributedRunner {
            backend,
            n_workers: a.workers,
            n_batches: a.batches,
            strategy,
            opts: DistOptions::default(),
        })
    };
    let report = select_k(&input, &cfg, runner.as_ref())?;
    fs::create_dir_all(&a.out)?;
    let json = a.out.join("selection.json");
    fs::write(&json, report.to_json()?)?;
    let csv_path = a.out.join("selection.csv");
    report.write_csv_file(&csv_path)?;
    println!(
        "{}",
        serde_json::json!({ "chosen_k": report.chosen_k, "rationale": report.selection_rationale })
    );
    Ok(vec![json, csv_path])
}

/// One long-form bench row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub n_workers: usize,
    pub n_batches: usize,
    pub k: usize,
    pub phase: String,
    pub seconds: f64,
    pub bytes: u64,
}

/// Phase rows for one run (rank 0's view): the five disjoint phases plus `total`.
pub fn bench_rows(run: &DistRun, k: usize) -> Vec<BenchRow> {
    let c = &run.result.counters;
    let row = |phase: &str, seconds: f64, bytes: u64| BenchRow {
        strategy: run.strategy,
        n_workers: run.n_workers,
        n_batches: run.n_batches,
        k,
        phase: phase.into(),
        seconds,
        bytes,
    };
    let mut rows: Vec<BenchRow> = c
        .phases()
        .iter()
        .map(|&(name, s)| {
            let bytes = match name {
                "allreduce" => run.result.collectives.bytes,
                "io" => c.bytes_read,
                _ => 0,
            };
            row(name, s, bytes)
        })
        .collect();
    rows.push(row("total", c.total_s, c.peak_tracked_bytes));
    rows
}

fn cmd_bench(a: &BenchArgs) -> CliResult<Vec<PathBuf>> {
    if a.k.is_empty() || a.workers.is_empty() || a.batches.is_empty() || a.strategies.is_empty() {
        return Err(usage("empty sweep"));
    }
    let backend: Backend = a.backend.parse()?;
    let matrix: Matrix = match &a.input {
        Some(p) => {
            require_file(p)?;
            read_matrix(p)?
        }
        None => match a.density {
            Some(d) => Matrix::Sparse(gen_sparse_random(a.m, a.n, d, a.seed)?),
            None => gen_lowrank(&SynthSpec::new(a.m, a.n, a.k.iter().copied().max().unwrap_or(1).min(a.m.min(a.n)), a.seed))?.0,
        },
    };
    let (m, n) = matrix.shape();
    let source = crate::distributed::in_memory(matrix);
    let mut rows = Vec::new();
    for s in &a.strategies {
        let strategy = parse_strategy(s, m, n)?;
        for &nw in &a.workers {
            for &nb in &a.batches {
                for &k in &a.k {
                    let plan = make_plan(m, n, k, nw, nb, strategy)?;
                    let cfg = NmfConfig {
                        k,
                        max_iters: a.iters,
                        eta: 0.0,
                        seed: a.seed,
                        ..NmfConfig::default()
                    };
                    let runs = run_local_group(backend, &source, &cfg, &plan, &DistOptions::default())?;
                    rows.extend(bench_rows(&runs[0], k));
                }
            }
        }
    }
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(fs::File::create(p)?)
        }
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["strategy", "N", "n_B", "k", "phase", "seconds", "bytes"])
        .map_err(|e| CliError::Run(csv_err(e)))?;
    for r in &rows {
        w.write_record([
            r.strategy.to_string(),
            r.n_workers.to_string(),
            r.n_batches.to_string(),
            r.k.to_string(),
            r.phase.clone(),
            r.seconds.to_string(),
            r.bytes.to_string(),
        ])
        .map_err(|e| CliError::Run(csv_err(e)))?;
    }
    w.flush()?;
    Ok(a.out.iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argv_round_trips_through_the_parser() {
        let cli = Cli::try_parse_from([
            "oocnmf", "factorize", "--input", "a.pdn", "--k", "3", "--workers", "2", "--peers", "x:1,y:2",
            "--rank", "1", "--budget", "4096", "--prefetch",
        ])
        .unwrap();
        let Cmd::Factorize(a) = cli.command else { panic!() };
        let again = Cli::try_parse_from(std::iter::once("oocnmf".to_string()).chain(factorize_argv(&a))).unwrap();
        let Cmd::Factorize(b) = again.command else { panic!() };
        assert_eq!(serde_json::to_value(&a).unwrap(), serde_json::to_value(&b).unwrap());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["oocnmf", "factorize", "--k", "2"]), EXIT_USAGE);
        assert_eq!(run(["oocnmf", "factorize", "--input", "/nonexistent/a.pdn", "--k", "2"]), EXIT_USAGE);
        assert_eq!(run(["oocnmf", "bench", "--k", ""]), EXIT_USAGE);
    }
}
