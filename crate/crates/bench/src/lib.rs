//! Shared fixtures for the benchmarks.

use glisp_core::{adadne_partition, generate_power_law, Graph, PartitionAssignment, PartitionConfig};

/// Power-law graph with `n` vertices and its 8-way AdaDNE partition.
pub fn fixture(n: usize) -> (Graph, PartitionAssignment) {
    let g = generate_power_law(n, 4, 1).expect("generator");
    let a = adadne_partition(&g, &PartitionConfig::new(8).with_seed(1)).expect("partition");
    (g, a)
}
