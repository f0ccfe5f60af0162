use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

use super::{reduce_in_rank_order, CommHandle, Contribution, Transport};

struct Round {
    generation: u64,
    slots: Vec<Option<Contribution>>,
    arrived: usize,
    /// Set once the last rank arrives; ranks drain it before the next round opens.
    result: Option<std::result::Result<Arc<DenseMatrix>, String>>,
    readers_left: usize,
    poisoned: Option<String>,
}

struct Shared {
    size: usize,
    timeout: Duration,
    round: Mutex<Round>,
    cv: Condvar,
}

pub(crate) struct ThreadEndpoint {
    shared: Arc<Shared>,
}

pub(crate) fn thread_group(size: usize, timeout: Duration) -> Vec<CommHandle> {
    let shared = Arc::new(Shared {
        size,
        timeout,
        round: Mutex::new(Round {
            generation: 0,
            slots: (0..size).map(|_| None).collect(),
            arrived: 0,
            result: None,
            readers_left: 0,
            poisoned: None,
        }),
        cv: Condvar::new(),
    });
    (0..size)
        .map(|rank| {
            CommHandle::new(
                rank,
                size,
                Transport::Threads(ThreadEndpoint {
                    shared: Arc::clone(&shared),
                }),
            )
        })
        .collect()
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Round> {
        // A panicking worker must not wedge the others.
        self.round.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn wait<'a>(
        &self,
        guard: MutexGuard<'a, Round>,
        deadline: Instant,
    ) -> Result<MutexGuard<'a, Round>> {
        let now = Instant::now();
        if now >= deadline {
            return Err(Error::Timeout(self.timeout));
        }
        let (g, _) = self
            .cv
            .wait_timeout(guard, deadline - now)
            .unwrap_or_else(|p| p.into_inner());
        Ok(g)
    }
}

impl ThreadEndpoint {
    pub(crate) fn poison(&mut self, reason: &str) {
        let mut r = self.shared.lock();
        if r.poisoned.is_none() {
            r.poisoned = Some(reason.to_string());
        }
        self.shared.cv.notify_all();
    }

    pub(crate) fn exchange(&mut self, rank: usize, c: Contribution) -> Result<DenseMatrix> {
        let shared = &*self.shared;
        let deadline = Instant::now() + shared.timeout;
        let mut r = shared.lock();

        // wait for the previous round to drain
        while r.result.is_some() && r.poisoned.is_none() {
            r = match shared.wait(r, deadline) {
                Ok(g) => g,
                Err(e) => return Err(timeout_poison(shared, e)),
            };
        }
        if let Some(reason) = &r.poisoned {
            return Err(Error::Poisoned(reason.clone()));
        }

        let generation = r.generation;
        r.slots[rank] = Some(c);
        r.arrived += 1;
        if r.arrived == shared.size {
            let parts: Vec<&Contribution> = r.slots.iter().map(|s| s.as_ref().unwrap()).collect();
            let out = reduce_in_rank_order(&parts).map(Arc::new);
            if let Err(msg) = &out {
                r.poisoned = Some(msg.clone());
            }
            r.result = Some(out);
            r.readers_left = shared.size;
            shared.cv.notify_all();
        } else {
            while r.generation == generation && r.result.is_none() && r.poisoned.is_none() {
                r = match shared.wait(r, deadline) {
                    Ok(g) => g,
                    Err(e) => return Err(timeout_poison(shared, e)),
                };
            }
        }

        let out = match &r.result {
            Some(Ok(m)) => Ok(DenseMatrix::clone(m)),
            Some(Err(msg)) => Err(Error::Comm(msg.clone())),
            None => Err(Error::Poisoned(
                r.poisoned.clone().unwrap_or_else(|| "group poisoned".into()),
            )),
        };
        if r.result.is_some() {
            r.readers_left -= 1;
            if r.readers_left == 0 {
                r.slots.iter_mut().for_each(|s| *s = None);
                r.arrived = 0;
                r.result = None;
                r.generation += 1;
                shared.cv.notify_all();
            }
        }
        out
    }
}

fn timeout_poison(shared: &Shared, e: Error) -> Error {
    let mut r = shared.lock();
    if r.poisoned.is_none() {
        r.poisoned = Some(e.to_string());
    }
    shared.cv.notify_all();
    e
}
