//! Pluggable execution of embarrassingly parallel index ranges.
//!
//! Enumeration-heavy operations split their work into fixed chunks and hand
//! them to an [`Executor`]. Results are always reassembled in chunk order and
//! every reduction happens afterwards in a fixed order, so any executor
//! produces bit-identical output.

use alloc::vec::Vec;
use core::ops::Range;

/// Runs a function over consecutive index chunks and returns the per-chunk
/// results in chunk order.
pub trait Executor: Sync {
    fn map_chunks<T, F>(&self, n: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync;
}

/// Runs every chunk on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct Serial;

impl Executor for Serial {
    fn map_chunks<T, F>(&self, n: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync,
    {
        chunk_ranges(n, chunk).map(f).collect()
    }
}

/// The chunk boundaries every executor must use.
pub fn chunk_ranges(n: usize, chunk: usize) -> impl Iterator<Item = Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk)).map(move |i| i * chunk..((i + 1) * chunk).min(n))
}
