//! Worker lanes that map a function over `0..n`.
//!
//! One lane runs inline on the calling thread, which is the sequential
//! baseline. With more lanes, a dedicated thread pool runs one loop per lane.
//! Indices are split into static contiguous blocks or pulled `chunk` at a time
//! from a shared atomic cursor. Each lane keeps `(index, value)` pairs in a
//! private buffer. After the barrier the buffers are scattered into slots by
//! index, so the output order never depends on which lane finished first.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::config::Scheduling;
use crate::error::{Error, Result};

pub struct WorkerPool {
    lanes: usize,
    scheduling: Scheduling,
    chunk: usize,
    pool: Option<rayon::ThreadPool>,
}

impl WorkerPool {
    pub fn new(lanes: usize, scheduling: Scheduling, chunk: usize) -> Result<Self> {
        if lanes == 0 || chunk == 0 {
            return Err(Error::Config("workers and chunk must be >= 1".into()));
        }
        let pool = if lanes > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(lanes)
                    .thread_name(|i| format!("om-lane-{i}"))
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(WorkerPool {
            lanes,
            scheduling,
            chunk,
            pool,
        })
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn scheduling(&self) -> Scheduling {
        self.scheduling
    }

    /// `[f(0), f(1), …, f(n−1)]`, each index evaluated exactly once.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        let Some(pool) = &self.pool else {
            return (0..n).map(f).collect();
        };
        let cursor = AtomicUsize::new(0);
        let lanes = self.lanes;
        let per_lane: Vec<Vec<(usize, T)>> = pool.broadcast(|ctx| {
            let lane = ctx.index();
            let mut out = Vec::new();
            match self.scheduling {
                Scheduling::StaticBlock => {
                    for i in lane * n / lanes..(lane + 1) * n / lanes {
                        out.push((i, f(i)));
                    }
                }
                Scheduling::Dynamic => loop {
                    let start = cursor.fetch_add(self.chunk, Ordering::Relaxed);
                    if start >= n {
                        break;
                    }
                    for i in start..(start + self.chunk).min(n) {
                        out.push((i, f(i)));
                    }
                },
            }
            out
        });
        let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
        for (i, value) in per_lane.into_iter().flatten() {
            debug_assert!(slots[i].is_none());
            slots[i] = Some(value);
        }
        slots
            .into_iter()
            .map(|v| v.expect("every index is dispatched once"))
            .collect()
    }
}
