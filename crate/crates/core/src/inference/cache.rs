use std::collections::{HashSet, VecDeque};
use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Replacement policy for the dynamic chunk tier.
pub trait ChunkPolicy {
    fn capacity(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn contains(&self, chunk: u64) -> bool;
    /// Inserts a chunk not currently held; returns the evicted one.
    fn insert(&mut self, chunk: u64) -> Option<u64>;

    /// True on a hit. A miss inserts the chunk.
    fn access(&mut self, chunk: u64) -> bool {
        if self.contains(chunk) {
            return true;
        }
        self.insert(chunk);
        false
    }
}

#[derive(Clone, Debug)]
pub struct FifoCache {
    capacity: usize,
    queue: VecDeque<u64>,
    held: HashSet<u64>,
}

impl FifoCache {
    /// Capacity below 1 is raised to 1.
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        FifoCache {
            capacity,
            queue: VecDeque::with_capacity(capacity),
            held: HashSet::with_capacity(capacity),
        }
    }

    /// Chunks in insertion order, oldest first.
    pub fn contents(&self) -> impl Iterator<Item = u64> + '_ {
        self.queue.iter().copied()
    }
}

impl ChunkPolicy for FifoCache {
    fn capacity(&self) -> usize {
        self.capacity
    }

    fn len(&self) -> usize {
        self.queue.len()
    }

    fn contains(&self, chunk: u64) -> bool {
        self.held.contains(&chunk)
    }

    fn insert(&mut self, chunk: u64) -> Option<u64> {
        debug_assert!(!self.held.contains(&chunk));
        let evicted = if self.queue.len() == self.capacity {
            let old = self.queue.pop_front().expect("full queue");
            self.held.remove(&old);
            Some(old)
        } else {
            None
        };
        self.queue.push_back(chunk);
        self.held.insert(chunk);
        evicted
    }
}

/// `max(1, ceil(fraction * chunks))`.
pub fn dynamic_capacity(fraction: f64, chunks: usize) -> usize {
    ((fraction * chunks as f64).ceil() as usize).max(1)
}

/// Read accounting for one or more layer passes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CacheCounters {
    /// Row reads that missed the dynamic tier and were served by the static tier.
    pub static_hits: u64,
    pub dynamic_hits: u64,
    pub dynamic_misses: u64,
    /// Chunks loaded into the dynamic tier.
    pub chunks_fetched: u64,
    /// Row reads that went to the backing store during a layer pass.
    pub backing_reads: u64,
    /// Rows loaded into the static tier before the passes.
    pub fill_rows: u64,
    /// Backing-store chunks read while filling the static tier.
    pub fill_chunk_reads: u64,
}

impl CacheCounters {
    pub fn merge(&mut self, o: &CacheCounters) {
        self.static_hits += o.static_hits;
        self.dynamic_hits += o.dynamic_hits;
        self.dynamic_misses += o.dynamic_misses;
        self.chunks_fetched += o.chunks_fetched;
        self.backing_reads += o.backing_reads;
        self.fill_rows += o.fill_rows;
        self.fill_chunk_reads += o.fill_chunk_reads;
    }

    /// Dynamic hits over all row reads; 0 with no reads.
    pub fn hit_ratio(&self) -> f64 {
        let total = self.dynamic_hits + self.dynamic_misses;
        if total == 0 {
            0.0
        } else {
            self.dynamic_hits as f64 / total as f64
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "static_hits,dynamic_hits,chunks_fetched,hit_ratio")?;
        writeln!(
            w,
            "{},{},{},{:.6}",
            self.static_hits,
            self.dynamic_hits,
            self.chunks_fetched,
            self.hit_ratio()
        )?;
        Ok(())
    }
}
