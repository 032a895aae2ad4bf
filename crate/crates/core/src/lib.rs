//! Partitioned graph learning toolkit: vertex-cut partitioning, a compact
//! read-only partition store, Gather-Apply neighbor sampling over shards, a
//! small binary sampling service, vertex reordering and layerwise GNN
//! inference with a two-level embedding cache.

pub mod error;
pub mod generate;
pub mod graph;
pub mod inference;
pub mod netsvc;
pub mod partition;
pub mod pstore;
pub mod reorder;
pub mod sampler;
mod util;

pub use error::{Error, Result};
pub use generate::{generate_power_law, generate_power_law_with, PowerLawOptions};
pub use graph::{
    load_edge_list, parse_edge_list, DegreeHistogram, Direction, Edge, EdgeType, Graph,
    LoadOptions, VertexId, VertexType,
};
pub use partition::{
    adadne_partition, compute_metrics, hash_partition_1d, interior_fractions, partition_stats,
    PartitionAssignment, PartitionConfig, PartitionId, PartitionMode, PartitionQuality,
    PartitionStats,
};
pub use partition::vertex_owners;
pub use pstore::{build_store, build_stores, OutNeighbors, PartitionStore};
pub use sampler::{
    k_hop_sample, FanoutSpec, GatherShard, Routing, SampledSubgraph, SamplingConfig, Shard,
};
pub use netsvc::{remote_gather, serve, RemoteShard, ServerHandle};
pub use reorder::{
    locality_score, reorder, reorder_graph, DegreeKind, LocalityScore, Permutation, ReorderAlgorithm,
};
pub use inference::{
    input_features, interior_boundary_report, layer_forward, layerwise_infer, samplewise_infer, CacheCounters,
    EmbeddingStore, Embeddings, GnnLayer, GnnModel, InferenceConfig, InferenceOutput, WorkloadPlan,
};
