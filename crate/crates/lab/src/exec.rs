use std::ops::Range;

use mess3_core::exec::{chunk_ranges, Executor};
use rayon::prelude::*;

/// Runs chunks on a dedicated rayon pool. Chunk results come back in chunk
/// order, so output does not depend on the thread count.
pub struct Threads {
    pool: rayon::ThreadPool,
}

impl Threads {
    /// `threads == 0` uses one thread per available core.
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        Self { pool }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Threads {
    fn map_chunks<T, F>(&self, n: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync,
    {
        let ranges: Vec<Range<usize>> = chunk_ranges(n, chunk).collect();
        self.pool.install(|| ranges.into_par_iter().map(&f).collect())
    }
}
