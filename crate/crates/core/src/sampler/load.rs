use std::io::Write;

use super::{GatherShard, ShardCounters};
use crate::error::Result;
use crate::partition::PartitionId;

#[derive(Clone, Debug, PartialEq)]
pub struct LoadEntry {
    pub shard: PartitionId,
    pub counters: ShardCounters,
    /// Edges scanned plus seeds handled.
    pub workload: u64,
    /// `workload / min workload`; `None` when the shard did no work, which
    /// reads as an unbounded imbalance.
    pub normalized: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadReport {
    pub entries: Vec<LoadEntry>,
}

/// Collects counters from every shard and normalizes workloads by the
/// smallest nonzero one.
pub fn load_report<S: GatherShard + ?Sized>(shards: &[&S]) -> Result<LoadReport> {
    let mut entries = Vec::with_capacity(shards.len());
    for s in shards {
        let c = s.counters()?;
        entries.push(LoadEntry {
            shard: s.shard_id(),
            counters: c,
            workload: c.edges_scanned + c.seeds,
            normalized: None,
        });
    }
    entries.sort_by_key(|e| e.shard);
    let min = entries.iter().map(|e| e.workload).filter(|&w| w > 0).min();
    if let Some(min) = min {
        for e in &mut entries {
            if e.workload > 0 {
                e.normalized = Some(e.workload as f64 / min as f64);
            }
        }
    }
    Ok(LoadReport { entries })
}

impl LoadReport {
    /// Largest normalized load; infinite when some shard sat idle while
    /// others worked.
    pub fn max_normalized(&self) -> f64 {
        let busy = self.entries.iter().any(|e| e.workload > 0);
        self.entries
            .iter()
            .map(|e| match e.normalized {
                Some(x) => x,
                None if busy => f64::INFINITY,
                None => 1.0,
            })
            .fold(1.0, f64::max)
    }

    /// `shard,requests,seeds,edges_scanned,workload,normalized`. Wall time is
    /// left out so reports are reproducible.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "shard,requests,seeds,edges_scanned,workload,normalized")?;
        for e in &self.entries {
            let norm = match e.normalized {
                Some(x) => format!("{x:.6}"),
                None => "inf".to_string(),
            };
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.shard, e.counters.requests, e.counters.seeds, e.counters.edges_scanned, e.workload, norm
            )?;
        }
        Ok(())
    }
}
