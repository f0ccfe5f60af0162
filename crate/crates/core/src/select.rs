//! NMFk-style estimation of the latent dimension.
//!
//! For each candidate k the input is perturbed `P` times, each copy is
//! factorized, and the columns of the resulting W matrices are clustered
//! across runs. Stable solutions give tight clusters (high silhouettes);
//! overfitting k splits features inconsistently and the minimum silhouette
//! collapses. The chosen k balances that against reconstruction error.

use std::io::Write;
use std::path::Path;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm::Backend;
use crate::distributed::{run_local_group, DistOptions};
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, DenseMatrix, Matrix, MatrixRef, Storage};
use crate::partition::{choose_strategy, make_plan, Strategy};
use crate::rng::derive_seed;
use crate::serial::{nmf_serial, NmfConfig, NmfResult};

/// Largest k for which column matching is solved exactly.
pub const EXACT_MATCHING_MAX_K: usize = 12;

/// Mean error at the best-scoring k is multiplied by this to get the error ceiling.
pub const ERROR_SLACK: f64 = 1.5;

/// Multiplies every stored entry by an independent draw from
/// uniform[1 − δ, 1 + δ]. Zeros stay zero; the sparsity pattern is kept.
pub fn perturb(a: MatrixRef<'_>, delta: f64, seed: u64) -> Result<Matrix> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidConfig(format!("delta must be in [0, 1), got {delta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |v: f64| {
        if delta == 0.0 {
            v
        } else {
            v * rng.gen_range(1.0 - delta..=1.0 + delta)
        }
    };
    Ok(match a.storage() {
        Storage::Dense(_) => {
            let mut d = a.to_dense();
            for v in d.data_mut() {
                *v = draw(*v);
            }
            Matrix::Dense(d)
        }
        Storage::Sparse(_) => {
            let Matrix::Sparse(s) = a.to_owned_matrix() else { unreachable!() };
            let (rows, cols) = s.shape();
            let row_ptr = s.row_ptr().to_vec();
            let col_idx = s.col_idx().to_vec();
            let values = s.values().iter().map(|&v| draw(v)).collect();
            Matrix::Sparse(CsrMatrix::new(rows, cols, row_ptr, col_idx, values)?)
        }
    })
}

fn column(w: &DenseMatrix, c: usize) -> Vec<f64> {
    (0..w.rows()).map(|i| w.get(i, c)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = dot(&v, &v).sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.into_iter().map(|x| x / n).collect())
}

/// Maximum-weight assignment of rows to distinct columns (rows ≤ cols).
/// Returns `assign[row] = col`. O(rows² · cols).
pub fn max_weight_assignment(score: &DenseMatrix) -> Vec<usize> {
    let (n, m) = score.shape();
    assert!(n <= m, "assignment needs rows <= cols");
    // potentials formulation on costs = -score, 1-based with a virtual column 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = -score.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Repeatedly takes the most similar unassigned (row, col) pair.
fn greedy_assignment(score: &DenseMatrix) -> Vec<usize> {
    let (n, m) = score.shape();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| score.get(b.0, b.1).total_cmp(&score.get(a.0, a.1)));
    let mut assign = vec![usize::MAX; n];
    let mut taken = vec![false; m];
    for (i, j) in pairs {
        if assign[i] == usize::MAX && !taken[j] {
            assign[i] = j;
            taken[j] = true;
        }
    }
    assign
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// `members[c]` holds the unit-normalized columns assigned to cluster c.
    pub members: Vec<Vec<Vec<f64>>>,
    /// `assignment[r][j]`: cluster of column j of run r, `None` if excluded.
    pub assignment: Vec<Vec<Option<usize>>>,
    /// Elementwise medians of each cluster (m×k).
    pub medians: DenseMatrix,
    /// `(run, column)` pairs dropped because the column was zero.
    pub excluded: Vec<(usize, usize)>,
    pub anchor_run: usize,
}

/// Groups the columns of `runs` (each m×k) into k clusters, one column per
/// run per cluster, anchored on the first run that has no zero column.
pub fn cluster_columns(runs: &[DenseMatrix], k: usize) -> Result<Clustering> {
    if runs.len() < 2 {
        return Err(Error::InvalidConfig(format!("clustering needs at least 2 runs, got {}", runs.len())));
    }
    let m = runs[0].rows();
    if let Some(bad) = runs.iter().find(|w| w.shape() != (m, k)) {
        return Err(Error::mismatch("cluster_columns", (m, k), bad.shape()));
    }
    let normed: Vec<Vec<Option<Vec<f64>>>> = runs
        .iter()
        .map(|w| (0..k).map(|c| normalized(column(w, c))).collect())
        .collect();
    let anchor_run = normed
        .iter()
        .position(|cols| cols.iter().all(Option::is_some))
        .ok_or_else(|| Error::Infeasible("every run has at least one zero column".into()))?;
    let anchors: Vec<Vec<f64>> = normed[anchor_run].iter().map(|c| c.clone().unwrap()).collect();

    let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(runs.len()); k];
    let mut assignment = Vec::with_capacity(runs.len());
    let mut excluded = Vec::new();
    for (r, cols) in normed.iter().enumerate() {
        let live: Vec<usize> = (0..k).filter(|&j| cols[j].is_some()).collect();
        for j in (0..k).filter(|j| cols[*j].is_none()) {
            excluded.push((r, j));
        }
        let mut row_assign = vec![None; k];
        if r == anchor_run {
            for (j, slot) in row_assign.iter_mut().enumerate() {
                *slot = Some(j);
            }
        } else if !live.is_empty() {
            let score = DenseMatrix::from_fn(live.len(), k, |a, c| dot(cols[live[a]].as_ref().unwrap(), &anchors[c]));
            let assign = if k <= EXACT_MATCHING_MAX_K {
                max_weight_assignment(&score)
            } else {
                greedy_assignment(&score)
            };
            for (a, &c) in assign.iter().enumerate() {
                row_assign[live[a]] = Some(c);
            }
        }
        for (j, c) in row_assign.iter().enumerate() {
            if let Some(c) = *c {
                members[c].push(cols[j].clone().unwrap());
            }
        }
        assignment.push(row_assign);
    }

    let medians = DenseMatrix::from_fn(m, k, |i, c| {
        let mut xs: Vec<f64> = members[c].iter().map(|v| v[i]).collect();
        median(&mut xs)
    });
    Ok(Clustering {
        members,
        assignment,
        medians,
        excluded,
        anchor_run,
    })
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouettes {
    pub min: f64,
    pub mean: f64,
    /// Mean silhouette of each cluster's members.
    pub per_cluster: Vec<f64>,
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    (1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0)
}

/// Silhouettes under cosine distance. A single cluster scores 1.0 by
/// convention; members of singleton clusters score 0.
pub fn silhouette(clusters: &[Vec<Vec<f64>>]) -> Result<Silhouettes> {
    if clusters.is_empty() || clusters.iter().any(Vec::is_empty) {
        return Err(Error::InvalidConfig("silhouette needs nonempty clusters".into()));
    }
    if clusters.len() == 1 {
        return Ok(Silhouettes {
            min: 1.0,
            mean: 1.0,
            per_cluster: vec![1.0],
        });
    }
    let points: Vec<(usize, &[f64])> = clusters
        .iter()
        .enumerate()
        .flat_map(|(c, ms)| ms.iter().map(move |v| (c, v.as_slice())))
        .collect();
    let n = points.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(points[i].1, points[j].1);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let k = clusters.len();
    let mut per_cluster = vec![0.0; k];
    let (mut min, mut sum) = (f64::INFINITY, 0.0);
    for i in 0..n {
        let own = points[i].0;
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[points[j].0] += dist[i * n + j];
            }
        }
        let s = if clusters[own].len() == 1 {
            0.0
        } else {
            let a = sums[own] / (clusters[own].len() - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / clusters[c].len() as f64)
                .fold(f64::INFINITY, f64::min);
            let d = a.max(b);
            if d == 0.0 { 0.0 } else { (b - a) / d }
        };
        per_cluster[own] += s / clusters[own].len() as f64;
        min = min.min(s);
        sum += s;
    }
    Ok(Silhouettes {
        min,
        mean: sum / n as f64,
        per_cluster,
    })
}

/// Entry (i, j) is the Pearson correlation of column i of `w_true` with
/// column j of `w_est`.
pub fn pearson_correlation_matrix(w_true: &DenseMatrix, w_est: &DenseMatrix) -> Result<DenseMatrix> {
    if w_true.rows() != w_est.rows() {
        return Err(Error::mismatch("pearson", w_true.shape(), w_est.shape()));
    }
    let centred = |w: &DenseMatrix, name: &str| -> Result<Vec<Vec<f64>>> {
        (0..w.cols())
            .map(|c| {
                let col = column(w, c);
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                let v: Vec<f64> = col.iter().map(|x| x - mean).collect();
                let norm = dot(&v, &v).sqrt();
                if norm == 0.0 {
                    return Err(Error::InvalidMatrix(format!("column {c} of {name} has zero variance")));
                }
                Ok(v.into_iter().map(|x| x / norm).collect())
            })
            .collect()
    };
    let a = centred(w_true, "w_true")?;
    let b = centred(w_est, "w_est")?;
    Ok(DenseMatrix::from_fn(a.len(), b.len(), |i, j| dot(&a[i], &b[j]).clamp(-1.0, 1.0)))
}

/// A column permutation making every diagonal entry of `corr` at least
/// `threshold`, if one exists.
pub fn permutation_above(corr: &DenseMatrix, threshold: f64) -> Option<Vec<usize>> {
    if corr.rows() > corr.cols() {
        return None;
    }
    let hits = DenseMatrix::from_fn(corr.rows(), corr.cols(), |i, j| f64::from(u8::from(corr.get(i, j) >= threshold)));
    let perm = max_weight_assignment(&hits);
    perm.iter()
        .enumerate()
        .all(|(i, &j)| corr.get(i, j) >= threshold)
        .then_some(perm)
}

/// Something that factorizes a matrix; lets selection run serially or over
/// a worker group.
pub trait NmfRunner: Sync {
    fn factorize(&self, a: &Matrix, cfg: &NmfConfig) -> Result<NmfResult>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SerialRunner;

impl NmfRunner for SerialRunner {
    fn factorize(&self, a: &Matrix, cfg: &NmfConfig) -> Result<NmfResult> {
        nmf_serial(a.as_ref(), cfg)
    }
}

/// Runs each factorization on an in-process worker group.
#[derive(Debug, Clone)]
pub struct DistributedRunner {
    pub backend: Backend,
    pub n_workers: usize,
    pub n_batches: usize,
    /// `None` applies the n > m rule.
    pub strategy: Option<Strategy>,
    pub opts: DistOptions,
}

impl NmfRunner for DistributedRunner {
    fn factorize(&self, a: &Matrix, cfg: &NmfConfig) -> Result<NmfResult> {
        let (m, n) = a.shape();
        let strategy = self.strategy.unwrap_or_else(|| choose_strategy(m, n));
        let plan = make_plan(m, n, cfg.k, self.n_workers, self.n_batches, strategy)?;
        let source = crate::distributed::in_memory(a.clone());
        let mut runs = run_local_group(self.backend, &source, cfg, &plan, &self.opts)?;
        Ok(runs.swap_remove(0).result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub n_perturbations: usize,
    pub delta: f64,
    pub sil_threshold: f64,
    /// Template for each run; `k` and `seed` are overwritten.
    pub nmf: NmfConfig,
    pub seed: u64,
}

impl SelectionConfig {
    pub fn new(k_min: usize, k_max: usize) -> Self {
        Self {
            k_min,
            k_max,
            n_perturbations: 16,
            delta: 0.03,
            sil_threshold: 0.75,
            nmf: NmfConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        if self.k_min < 1 || self.k_min > self.k_max {
            return Err(Error::InvalidConfig(format!("invalid k range [{}, {}]", self.k_min, self.k_max)));
        }
        // k = min(m, n) is allowed only for degenerate single-row/column inputs.
        if self.k_max >= m.min(n).max(2) {
            return Err(Error::InvalidConfig(format!(
                "k_max {} must be below min(m, n) = {}",
                self.k_max,
                m.min(n)
            )));
        }
        if self.n_perturbations < 2 {
            return Err(Error::InvalidConfig("need at least 2 perturbations".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if !(-1.0..=1.0).contains(&self.sil_threshold) {
            return Err(Error::InvalidConfig(format!("sil_threshold must be in [-1, 1], got {}", self.sil_threshold)));
        }
        self.nmf.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRecord {
    pub k: usize,
    /// False when fewer than two runs survived or clustering failed.
    pub valid: bool,
    pub min_silhouette: f64,
    pub mean_silhouette: f64,
    pub mean_relative_error: f64,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub excluded_columns: usize,
    pub cluster_medians: Option<DenseMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub records: Vec<KRecord>,
    pub chosen_k: Option<usize>,
    pub selection_rationale: String,
}

impl SelectionReport {
    pub fn record(&self, k: usize) -> Option<&KRecord> {
        self.records.iter().find(|r| r.k == k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `k,min_sil,mean_sil,mean_err` rows, one per candidate.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "min_sil", "mean_sil", "mean_err", "valid"]).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.k.to_string(),
                r.min_silhouette.to_string(),
                r.mean_silhouette.to_string(),
                r.mean_relative_error.to_string(),
                r.valid.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// The selection rule: among valid k with `min_sil ≥ threshold`, the lowest
/// mean error sets an error ceiling of `ERROR_SLACK ×` that error; the
/// largest k passing both tests wins.
pub fn choose_k(records: &[KRecord], sil_threshold: f64) -> (Option<usize>, String) {
    let stable: Vec<&KRecord> = records
        .iter()
        .filter(|r| r.valid && r.min_silhouette >= sil_threshold)
        .collect();
    let Some(best) = stable
        .iter()
        .min_by(|a, b| a.mean_relative_error.total_cmp(&b.mean_relative_error))
    else {
        return (
            None,
            format!("no k reached min silhouette >= {sil_threshold}; nothing selected"),
        );
    };
    let ceiling = ERROR_SLACK * best.mean_relative_error;
    let chosen = stable
        .iter()
        .filter(|r| r.mean_relative_error <= ceiling)
        .map(|r| r.k)
        .max()
        .expect("best passes its own ceiling");
    let rationale = format!(
        "k={chosen}: largest k with min silhouette >= {sil_threshold} and mean relative error <= {ceiling:.3e} \
         ({ERROR_SLACK} x the error {:.3e} at best-scoring k={})",
        best.mean_relative_error, best.k
    );
    (Some(chosen), rationale)
}

/// Runs the ensemble for one k.
pub fn evaluate_k(a: &Matrix, k: usize, cfg: &SelectionConfig, runner: &dyn NmfRunner) -> KRecord {
    let mut ws = Vec::with_capacity(cfg.n_perturbations);
    let mut errors = Vec::with_capacity(cfg.n_perturbations);
    let mut failed = 0;
    for p in 0..cfg.n_perturbations {
        let mut outcome = None;
        for attempt in 0..2u64 {
            let data_seed = derive_seed(&[cfg.seed, k as u64, p as u64, attempt, 0]);
            let run_seed = derive_seed(&[cfg.seed, k as u64, p as u64, attempt, 1]);
            let nmf = NmfConfig {
                k,
                seed: run_seed,
                ..cfg.nmf.clone()
            };
            let res = perturb(a.as_ref(), cfg.delta, data_seed).and_then(|ap| runner.factorize(&ap, &nmf));
            match res {
                Ok(r) => {
                    outcome = Some(r);
                    break;
                }
                Err(e) => warn!("k={k} run {p} attempt {attempt} failed: {e}"),
            }
        }
        match outcome {
            Some(r) => {
                errors.push(r.final_error());
                ws.push(r.w);
            }
            None => failed += 1,
        }
    }
    let runs_ok = ws.len();
    let mean_err = if errors.is_empty() {
        f64::NAN
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };
    let invalid = |note: String| KRecord {
        k,
        valid: false,
        min_silhouette: f64::NAN,
        mean_silhouette: f64::NAN,
        mean_relative_error: mean_err,
        runs_ok,
        runs_failed: failed,
        excluded_columns: 0,
        cluster_medians: None,
        note: Some(note),
    };
    if runs_ok < 2 {
        return invalid(format!("only {runs_ok} runs survived"));
    }
    let clustering = match cluster_columns(&ws, k) {
        Ok(c) => c,
        Err(e) => return invalid(format!("clustering failed: {e}")),
    };
    let sil = match silhouette(&clustering.members) {
        Ok(s) => s,
        Err(e) => return invalid(format!("silhouette failed: {e}")),
    };
    debug!("k={k}: per-cluster silhouettes {:?}", sil.per_cluster);
    KRecord {
        k,
        valid: true,
        min_silhouette: sil.min,
        mean_silhouette: sil.mean,
        mean_relative_error: mean_err,
        runs_ok,
        runs_failed: failed,
        excluded_columns: clustering.excluded.len(),
        cluster_medians: Some(clustering.medians),
        note: None,
    }
}

/// Scores every k in the configured range and picks one.
pub fn select_k(a: &Matrix, cfg: &SelectionConfig, runner: &dyn NmfRunner) -> Result<SelectionReport> {
    let (m, n) = a.shape();
    cfg.validate(m, n)?;
    crate::linalg::validate_nonnegative(a.as_ref())?;
    let mut records = Vec::new();
    for k in cfg.k_min..=cfg.k_max {
        let r = evaluate_k(a, k, cfg, runner);
        info!(
            "k={k}: min_sil={:.4} mean_sil={:.4} mean_err={:.4e} ok={} failed={}",
            r.min_silhouette, r.mean_silhouette, r.mean_relative_error, r.runs_ok, r.runs_failed
        );
        records.push(r);
    }
    let (chosen_k, selection_rationale) = choose_k(&records, cfg.sil_threshold);
    Ok(SelectionReport {
        records,
        chosen_k,
        selection_rationale,
    })
}
