//! Deterministic all-reduce-sum among `N` workers.
//!
//! Every backend produces the elementwise sum reduced in ascending rank
//! order (rank 0's buffer first), independent of arrival order, so results
//! are bit-identical across runs and across backends. A failed collective
//! poisons the group: every later collective on any rank fails fast.

mod tcp;
mod threads;

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub use tcp::{tcp_local_group, TcpConfig, TcpRoot};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Loopback,
    Threads,
    Tcp,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loopback" => Ok(Backend::Loopback),
            "threads" => Ok(Backend::Threads),
            "tcp" => Ok(Backend::Tcp),
            other => Err(Error::InvalidConfig(format!("unknown backend {other}"))),
        }
    }
}

/// Label attached to each collective; stats are aggregated per tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhaseTag(pub u32);

impl PhaseTag {
    pub const SETUP: PhaseTag = PhaseTag(0);
    pub const W_UPDATE: PhaseTag = PhaseTag(1);
    pub const H_UPDATE: PhaseTag = PhaseTag(2);
    pub const ERROR_CHECK: PhaseTag = PhaseTag(3);
    pub const GATHER: PhaseTag = PhaseTag(4);
    pub const CONSISTENCY: PhaseTag = PhaseTag(5);
    /// Reserved for barriers.
    pub const BARRIER: PhaseTag = PhaseTag(0xFFFF_FFF1);

    pub fn name(self) -> String {
        match self {
            Self::SETUP => "setup".into(),
            Self::W_UPDATE => "w_update".into(),
            Self::H_UPDATE => "h_update".into(),
            Self::ERROR_CHECK => "error_check".into(),
            Self::GATHER => "gather".into(),
            Self::CONSISTENCY => "consistency".into(),
            Self::BARRIER => "barrier".into(),
            PhaseTag(t) => format!("tag{t}"),
        }
    }
}

impl fmt::Display for PhaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCollectiveStats {
    pub calls: u64,
    pub bytes: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectiveRecord {
    pub seq: u64,
    pub tag: PhaseTag,
    pub rows: usize,
    pub cols: usize,
}

/// Counters for one handle. Only ever grow.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectiveStats {
    pub calls: u64,
    pub bytes: u64,
    pub seconds: f64,
    pub per_phase: BTreeMap<String, PhaseCollectiveStats>,
    /// Every collective in call order. Not serialized.
    #[serde(skip)]
    pub log: Vec<CollectiveRecord>,
}

impl CollectiveStats {
    fn record(&mut self, rec: CollectiveRecord, seconds: f64) {
        let bytes = (rec.rows * rec.cols * 8) as u64;
        self.calls += 1;
        self.bytes += bytes;
        self.seconds += seconds;
        let e = self.per_phase.entry(rec.tag.name()).or_default();
        e.calls += 1;
        e.bytes += bytes;
        e.seconds += seconds;
        self.log.push(rec);
    }

    pub fn calls_for(&self, tag: PhaseTag) -> u64 {
        self.per_phase.get(&tag.name()).map_or(0, |p| p.calls)
    }

    pub fn merge(&mut self, other: &CollectiveStats) {
        self.calls += other.calls;
        self.bytes += other.bytes;
        self.seconds += other.seconds;
        for (k, v) in &other.per_phase {
            let e = self.per_phase.entry(k.clone()).or_default();
            e.calls += v.calls;
            e.bytes += v.bytes;
            e.seconds += v.seconds;
        }
        self.log.extend_from_slice(&other.log);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OpKind {
    AllReduce,
    Barrier,
}

/// One rank's contribution to a collective.
#[derive(Debug)]
pub(crate) struct Contribution {
    pub seq: u64,
    pub kind: OpKind,
    pub tag: PhaseTag,
    pub buf: DenseMatrix,
}

/// Sums contributions in ascending rank order after checking that every rank
/// called the same collective.
pub(crate) fn reduce_in_rank_order(parts: &[&Contribution]) -> std::result::Result<DenseMatrix, String> {
    let first = parts[0];
    for (rank, c) in parts.iter().enumerate().skip(1) {
        if c.seq != first.seq {
            return Err(format!(
                "collective sequence mismatch: rank 0 at seq {}, rank {rank} at seq {}",
                first.seq, c.seq
            ));
        }
        if c.kind != first.kind || c.tag != first.tag {
            return Err(format!(
                "collective mismatch at seq {}: rank 0 called {:?}/{}, rank {rank} called {:?}/{}",
                first.seq, first.kind, first.tag, c.kind, c.tag
            ));
        }
        if c.buf.shape() != first.buf.shape() {
            return Err(format!(
                "all-reduce shape mismatch at seq {}: rank 0 {}x{}, rank {rank} {}x{}",
                first.seq,
                first.buf.rows(),
                first.buf.cols(),
                c.buf.rows(),
                c.buf.cols()
            ));
        }
    }
    let mut out = first.buf.clone();
    for c in &parts[1..] {
        for (o, &x) in out.data_mut().iter_mut().zip(c.buf.data()) {
            *o += x;
        }
    }
    Ok(out)
}

pub(crate) enum Transport {
    Loopback,
    Threads(threads::ThreadEndpoint),
    Tcp(tcp::TcpEndpoint),
}

/// One rank's handle on a communicator group. Owned by a single worker.
pub struct CommHandle {
    rank: usize,
    size: usize,
    seq: u64,
    poisoned: Option<String>,
    transport: Transport,
    stats: CollectiveStats,
}

impl fmt::Debug for CommHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CommHandle")
            .field("rank", &self.rank)
            .field("size", &self.size)
            .field("backend", &self.backend())
            .field("seq", &self.seq)
            .finish()
    }
}

impl CommHandle {
    pub(crate) fn new(rank: usize, size: usize, transport: Transport) -> Self {
        Self {
            rank,
            size,
            seq: 0,
            poisoned: None,
            transport,
            stats: CollectiveStats::default(),
        }
    }

    pub fn loopback() -> Self {
        Self::new(0, 1, Transport::Loopback)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn backend(&self) -> Backend {
        match self.transport {
            Transport::Loopback => Backend::Loopback,
            Transport::Threads(_) => Backend::Threads,
            Transport::Tcp(_) => Backend::Tcp,
        }
    }

    pub fn stats(&self) -> &CollectiveStats {
        &self.stats
    }

    pub fn take_stats(&mut self) -> CollectiveStats {
        std::mem::take(&mut self.stats)
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned.is_some()
    }

    /// Marks the group failed so peers stop waiting on this rank.
    pub fn poison(&mut self, reason: &str) {
        if self.poisoned.is_some() {
            return;
        }
        self.poisoned = Some(reason.to_string());
        match &mut self.transport {
            Transport::Loopback => {}
            Transport::Threads(t) => t.poison(reason),
            Transport::Tcp(t) => t.poison(reason),
        }
    }

    fn collective(&mut self, kind: OpKind, tag: PhaseTag, buf: &DenseMatrix) -> Result<DenseMatrix> {
        if let Some(reason) = &self.poisoned {
            return Err(Error::Poisoned(reason.clone()));
        }
        let seq = self.seq;
        self.seq += 1;
        let start = Instant::now();
        let contribution = Contribution {
            seq,
            kind,
            tag,
            buf: buf.clone(),
        };
        let out = match &mut self.transport {
            Transport::Loopback => Ok(contribution.buf),
            Transport::Threads(t) => t.exchange(self.rank, contribution),
            Transport::Tcp(t) => t.exchange(contribution),
        };
        match out {
            Ok(m) => {
                let rec = CollectiveRecord {
                    seq,
                    tag,
                    rows: buf.rows(),
                    cols: buf.cols(),
                };
                self.stats.record(rec, start.elapsed().as_secs_f64());
                Ok(m)
            }
            Err(e) => {
                let reason = e.to_string();
                self.poison(&reason);
                Err(e)
            }
        }
    }

    /// Elementwise sum of `buf` over all ranks, reduced in ascending rank order.
    /// Blocks until every rank has called.
    pub fn all_reduce_sum(&mut self, buf: &DenseMatrix, tag: PhaseTag) -> Result<DenseMatrix> {
        self.collective(OpKind::AllReduce, tag, buf)
    }

    /// Returns once every rank has entered the barrier.
    pub fn barrier(&mut self) -> Result<()> {
        self.collective(OpKind::Barrier, PhaseTag::BARRIER, &DenseMatrix::zeros(0, 0))
            .map(|_| ())
    }
}

/// Creates handles for a group.
///
/// * `Loopback`: `n` must be 1.
/// * `Threads`: returns `n` handles for in-process workers.
/// * `Tcp`: returns the single handle for `rank`, after joining the group
///   whose root (rank 0) listens on `endpoints[0]`.
pub fn spawn_group(
    n: usize,
    backend: Backend,
    endpoints: Option<&[String]>,
    rank: Option<usize>,
    timeout: Duration,
) -> Result<Vec<CommHandle>> {
    if n == 0 {
        return Err(Error::InvalidConfig("group needs at least one worker".into()));
    }
    match backend {
        Backend::Loopback => {
            if n != 1 {
                return Err(Error::InvalidConfig("loopback backend supports exactly one worker".into()));
            }
            Ok(vec![CommHandle::loopback()])
        }
        Backend::Threads => Ok(threads::thread_group(n, timeout)),
        Backend::Tcp => {
            let endpoints = endpoints.ok_or_else(|| {
                Error::InvalidConfig("tcp backend requires --peers".into())
            })?;
            if endpoints.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "tcp backend needs {n} endpoints, got {}",
                    endpoints.len()
                )));
            }
            let rank = rank.ok_or_else(|| Error::InvalidConfig("tcp backend requires --rank".into()))?;
            if rank >= n {
                return Err(Error::InvalidConfig(format!("rank {rank} outside group of {n}")));
            }
            let cfg = TcpConfig {
                timeout,
                ..TcpConfig::default()
            };
            let handle = if rank == 0 {
                TcpRoot::bind(&endpoints[0])?.accept(n, &cfg)?
            } else {
                tcp::join(&endpoints[0], rank, n, &cfg)?
            };
            Ok(vec![handle])
        }
    }
}

/// Runs `f` once per handle on its own thread and returns results in rank order.
pub fn run_workers<T, F>(handles: Vec<CommHandle>, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(CommHandle) -> Result<T> + Sync,
{
    let f = &f;
    std::thread::scope(|s| {
        let joins: Vec<_> = handles
            .into_iter()
            .map(|h| s.spawn(move || f(h)))
            .collect();
        joins
            .into_iter()
            .map(|j| {
                j.join()
                    .unwrap_or_else(|_| Err(Error::Comm("worker thread panicked".into())))
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_is_identity() {
        let mut h = CommHandle::loopback();
        let b = DenseMatrix::from_rows(&[[1.5, 2.0]]);
        assert_eq!(h.all_reduce_sum(&b, PhaseTag::W_UPDATE).unwrap(), b);
        h.barrier().unwrap();
        assert_eq!(h.stats().calls, 2);
        assert_eq!(h.stats().calls_for(PhaseTag::W_UPDATE), 1);
    }

    #[test]
    fn spawn_group_shapes() {
        let hs = spawn_group(6, Backend::Threads, None, None, DEFAULT_TIMEOUT).unwrap();
        let ranks: Vec<_> = hs.iter().map(|h| h.rank()).collect();
        assert_eq!(ranks, (0..6).collect::<Vec<_>>());
        assert!(spawn_group(2, Backend::Loopback, None, None, DEFAULT_TIMEOUT).is_err());
        assert!(spawn_group(2, Backend::Tcp, None, Some(0), DEFAULT_TIMEOUT).is_err());
    }
}
