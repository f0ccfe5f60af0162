//! Out-of-core backing store for A.
//!
//! Batches are windows of A that a worker stages before computing on them.
//! Two invariants hold at all times: resident bytes never exceed the budget,
//! and at most `n_cb` batches are resident.
//!
//! * In-memory backing hands out zero-copy views. A released view stays
//!   resident as a cache entry until evicted least-recently-released first,
//!   so reloading it is free.
//! * File backing (PDN1) reads every load from disk and frees the buffer on
//!   release. An optional helper thread reads the next batch ahead of time
//!   when it fits within both limits.

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::io::Pdn1Reader;
use crate::linalg::{CsrMatrix, Matrix, MatrixRef};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Window {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Window {
    pub fn new(rows: Range<usize>, cols: Range<usize>) -> Self {
        Self { rows, cols }
    }
}

#[derive(Debug, Clone)]
pub enum StoreSource {
    InMemory(Arc<Matrix>),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub budget_bytes: u64,
    /// Cap on concurrently resident batches.
    pub n_cb: usize,
    pub prefetch: bool,
}

impl StoreConfig {
    pub fn unlimited() -> Self {
        Self {
            budget_bytes: u64::MAX,
            n_cb: usize::MAX,
            prefetch: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreCounters {
    /// Batches materialized from the backing (cache hits excluded).
    pub loads: u64,
    pub cache_hits: u64,
    pub evictions: u64,
    /// Sum of materialized batch sizes.
    pub bytes_read: u64,
    pub peak_resident_bytes: u64,
    pub prefetches: u64,
}

/// A loaded batch. Hold it while computing, then pass it to
/// [`ChunkStore::release_batch`].
#[derive(Debug, Clone)]
pub struct Batch {
    id: u64,
    data: Arc<Matrix>,
    rows: Range<usize>,
    cols: Range<usize>,
    window: Window,
}

impl Batch {
    pub fn id(&self) -> u64 {
        self.id
    }

    /// The window this batch covers, in A's coordinates.
    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn view(&self) -> MatrixRef<'_> {
        self.data
            .as_ref()
            .as_ref()
            .window(self.rows.clone(), self.cols.clone())
            .expect("batch window validated at load")
    }
}

enum Backing {
    Memory(Arc<Matrix>),
    File { path: PathBuf, reader: Pdn1Reader },
}

#[derive(Debug)]
struct Entry {
    window: Window,
    bytes: u64,
    pinned: bool,
    released_at: u64,
}

struct Prefetch {
    window: Window,
    bytes: u64,
    handle: JoinHandle<Result<Matrix>>,
}

pub struct ChunkStore {
    backing: Backing,
    cfg: StoreConfig,
    shape: (usize, usize),
    sparse: bool,
    entries: HashMap<u64, Entry>,
    issued: HashSet<u64>,
    next_id: u64,
    tick: u64,
    resident_bytes: u64,
    prefetch: Option<Prefetch>,
    nnz_memo: HashMap<Window, usize>,
    counters: StoreCounters,
}

impl std::fmt::Debug for ChunkStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChunkStore")
            .field("shape", &self.shape)
            .field("cfg", &self.cfg)
            .field("resident_bytes", &self.resident_bytes)
            .field("counters", &self.counters)
            .finish()
    }
}

impl ChunkStore {
    pub fn open(source: StoreSource, cfg: StoreConfig) -> Result<Self> {
        if cfg.budget_bytes == 0 {
            return Err(Error::Budget("budget must be > 0 bytes".into()));
        }
        if cfg.n_cb == 0 {
            return Err(Error::Store("n_cb must be >= 1".into()));
        }
        let (backing, shape, sparse) = match source {
            StoreSource::InMemory(m) => {
                let shape = m.shape();
                let sparse = m.is_sparse();
                (Backing::Memory(m), shape, sparse)
            }
            StoreSource::File(path) => {
                let reader = Pdn1Reader::open(&path)?;
                let shape = reader.shape();
                let sparse = reader.is_sparse();
                (Backing::File { path, reader }, shape, sparse)
            }
        };
        Ok(Self {
            backing,
            cfg,
            shape,
            sparse,
            entries: HashMap::new(),
            issued: HashSet::new(),
            next_id: 0,
            tick: 0,
            resident_bytes: 0,
            prefetch: None,
            nnz_memo: HashMap::new(),
            counters: StoreCounters::default(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn is_sparse(&self) -> bool {
        self.sparse
    }

    pub fn config(&self) -> &StoreConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &StoreCounters {
        &self.counters
    }

    pub fn resident_bytes(&self) -> u64 {
        self.resident_bytes
    }

    pub fn resident_batches(&self) -> usize {
        self.entries.len() + usize::from(self.prefetch.is_some())
    }

    fn check_window(&self, w: &Window) -> Result<()> {
        if w.rows.start > w.rows.end
            || w.cols.start > w.cols.end
            || w.rows.end > self.shape.0
            || w.cols.end > self.shape.1
        {
            return Err(Error::WindowOutOfBounds {
                rows: w.rows.clone(),
                cols: w.cols.clone(),
                shape_rows: self.shape.0,
                shape_cols: self.shape.1,
            });
        }
        Ok(())
    }

    /// Stored entries inside a window (all cells for dense).
    pub fn window_nnz(&mut self, w: &Window) -> Result<usize> {
        self.check_window(w)?;
        if !self.sparse {
            return Ok(w.rows.len() * w.cols.len());
        }
        if let Some(&n) = self.nnz_memo.get(w) {
            return Ok(n);
        }
        let n = match &mut self.backing {
            Backing::Memory(m) => m.as_ref().as_ref().window(w.rows.clone(), w.cols.clone())?.stored(),
            // Sizing a CSR window needs its column indices; memoized per window.
            Backing::File { reader, .. } => reader.count_window(w.rows.clone(), w.cols.clone())?,
        };
        self.nnz_memo.insert(w.clone(), n);
        Ok(n)
    }

    /// Bytes a window occupies once staged.
    pub fn window_bytes(&mut self, w: &Window) -> Result<u64> {
        let nnz = self.window_nnz(w)?;
        Ok(if self.sparse {
            CsrMatrix::storage_bytes(w.rows.len(), nnz)
        } else {
            (nnz * 8) as u64
        })
    }

    /// Evicts released entries (least recently released first) and any
    /// unclaimed prefetch until `bytes` more fit in both limits.
    fn make_room(&mut self, bytes: u64, keep_prefetch: bool) -> Result<()> {
        loop {
            let fits_bytes = self.resident_bytes + bytes <= self.cfg.budget_bytes;
            let fits_count = self.resident_batches() < self.cfg.n_cb;
            if fits_bytes && fits_count {
                return Ok(());
            }
            let victim = self
                .entries
                .iter()
                .filter(|(_, e)| !e.pinned)
                .min_by_key(|(_, e)| e.released_at)
                .map(|(&id, _)| id);
            if let Some(id) = victim {
                let e = self.entries.remove(&id).unwrap();
                self.resident_bytes -= e.bytes;
                self.counters.evictions += 1;
                continue;
            }
            if !keep_prefetch {
                if let Some(p) = self.prefetch.take() {
                    let _ = p.handle.join();
                    self.resident_bytes -= p.bytes;
                    self.counters.evictions += 1;
                    continue;
                }
            }
            return Err(Error::Budget(format!(
                "cannot stage {bytes} B: {} B resident in {} pinned batches (budget {} B, n_cb {})",
                self.resident_bytes,
                self.resident_batches(),
                self.cfg.budget_bytes,
                self.cfg.n_cb
            )));
        }
    }

    fn bump_peak(&mut self) {
        self.counters.peak_resident_bytes = self.counters.peak_resident_bytes.max(self.resident_bytes);
    }

    fn issue(&mut self, window: Window, bytes: u64, data: Arc<Matrix>, rows: Range<usize>, cols: Range<usize>) -> Batch {
        let id = self.next_id;
        self.next_id += 1;
        self.issued.insert(id);
        self.entries.insert(
            id,
            Entry {
                window: window.clone(),
                bytes,
                pinned: true,
                released_at: 0,
            },
        );
        Batch {
            id,
            data,
            rows,
            cols,
            window,
        }
    }

    /// Stages `window` and returns a view of it.
    pub fn load_batch(&mut self, window: Window) -> Result<Batch> {
        self.check_window(&window)?;
        let bytes = self.window_bytes(&window)?;
        if bytes > self.cfg.budget_bytes {
            return Err(Error::Budget(format!(
                "batch of {bytes} B exceeds budget of {} B",
                self.cfg.budget_bytes
            )));
        }

        if let Backing::Memory(m) = &self.backing {
            let hit = self
                .entries
                .iter()
                .find(|(_, e)| !e.pinned && e.window == window)
                .map(|(&id, _)| id);
            if let Some(id) = hit {
                let m = Arc::clone(m);
                let e = self.entries.get_mut(&id).unwrap();
                e.pinned = true;
                self.counters.cache_hits += 1;
                return Ok(Batch {
                    id,
                    data: m,
                    rows: window.rows.clone(),
                    cols: window.cols.clone(),
                    window,
                });
            }
        }

        let claim_prefetch = self.prefetch.as_ref().is_some_and(|p| p.window == window);
        if claim_prefetch {
            let p = self.prefetch.take().unwrap();
            let data = p
                .handle
                .join()
                .map_err(|_| Error::Store("prefetch thread panicked".into()))??;
            let (r, c) = data.shape();
            self.counters.loads += 1;
            self.counters.bytes_read += p.bytes;
            return Ok(self.issue(window, p.bytes, Arc::new(data), 0..r, 0..c));
        }

        self.make_room(bytes, false)?;
        let batch = match &mut self.backing {
            Backing::Memory(m) => {
                let m = Arc::clone(m);
                let (rows, cols) = (window.rows.clone(), window.cols.clone());
                self.issue(window, bytes, m, rows, cols)
            }
            Backing::File { reader, .. } => {
                let data = reader.read_window(window.rows.clone(), window.cols.clone())?;
                let (r, c) = data.shape();
                self.counters.bytes_read += bytes;
                self.issue(window, bytes, Arc::new(data), 0..r, 0..c)
            }
        };
        self.counters.loads += 1;
        self.resident_bytes += bytes;
        self.bump_peak();
        Ok(batch)
    }

    /// Starts reading `window` on a helper thread if it fits without evicting
    /// anything pinned. Only file backings prefetch. Returns whether a read
    /// was scheduled.
    pub fn prefetch(&mut self, window: Window) -> Result<bool> {
        if !self.cfg.prefetch || self.prefetch.is_some() {
            return Ok(false);
        }
        let path = match &self.backing {
            Backing::Memory(_) => return Ok(false),
            Backing::File { path, .. } => path.clone(),
        };
        self.check_window(&window)?;
        let bytes = self.window_bytes(&window)?;
        if self.resident_bytes + bytes > self.cfg.budget_bytes || self.resident_batches() >= self.cfg.n_cb {
            return Ok(false);
        }
        let (rows, cols) = (window.rows.clone(), window.cols.clone());
        let handle = std::thread::spawn(move || Pdn1Reader::open(&path)?.read_window(rows, cols));
        self.resident_bytes += bytes;
        self.bump_peak();
        self.counters.prefetches += 1;
        self.prefetch = Some(Prefetch {
            window,
            bytes,
            handle,
        });
        Ok(true)
    }

    pub fn release_batch(&mut self, batch: &Batch) -> Result<()> {
        if !self.issued.contains(&batch.id) {
            return Err(Error::Store(format!("release of unknown batch {}", batch.id)));
        }
        let file_backed = matches!(self.backing, Backing::File { .. });
        match self.entries.get_mut(&batch.id) {
            Some(e) if e.pinned => {
                if file_backed {
                    let e = self.entries.remove(&batch.id).unwrap();
                    self.resident_bytes -= e.bytes;
                } else {
                    self.tick += 1;
                    e.pinned = false;
                    e.released_at = self.tick;
                }
                Ok(())
            }
            _ => Err(Error::Store(format!("double release of batch {}", batch.id))),
        }
    }

    /// Drops every released cache entry and any pending prefetch.
    pub fn clear_cache(&mut self) {
        let released: Vec<u64> = self
            .entries
            .iter()
            .filter(|(_, e)| !e.pinned)
            .map(|(&id, _)| id)
            .collect();
        for id in released {
            let e = self.entries.remove(&id).unwrap();
            self.resident_bytes -= e.bytes;
        }
        if let Some(p) = self.prefetch.take() {
            let _ = p.handle.join();
            self.resident_bytes -= p.bytes;
        }
    }
}

/// Opens a store on a PDN1 file.
pub fn open_file_store(path: impl AsRef<Path>, cfg: StoreConfig) -> Result<ChunkStore> {
    ChunkStore::open(StoreSource::File(path.as_ref().to_path_buf()), cfg)
}
