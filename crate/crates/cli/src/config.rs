use std::path::{Path, PathBuf};

use anyhow::Context;
use glisp_core::graph::Direction;
use glisp_core::sampler::Rounding;
use glisp_core::{DegreeKind, PartitionConfig, PartitionMode, ReorderAlgorithm};
use serde::{Deserialize, Serialize};

use crate::Usage;

/// Everything one `glisp run` needs. Paths are relative to `workdir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub workdir: PathBuf,
    pub graph: GraphConfig,
    pub partition: PartitionSection,
    pub sampler: SamplerSection,
    pub reorder: ReorderSection,
    pub inference: InferenceSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            workdir: PathBuf::from("glisp-out"),
            graph: GraphConfig::default(),
            partition: PartitionSection::default(),
            sampler: SamplerSection::default(),
            reorder: ReorderSection::default(),
            inference: InferenceSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Existing edge list; when absent a power-law graph is generated.
    pub input: Option<PathBuf>,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { input: None, n: 10_000, m: 4, seed: 1 }
    }
}

/// Partitioner choice. `hash` places each edge by a hash of its source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Adadne,
    Dne,
    Hash,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adadne" => Ok(Method::Adadne),
            "dne" => Ok(Method::Dne),
            "hash" => Ok(Method::Hash),
            other => Err(format!("unknown partition mode `{other}` (expected adadne, dne or hash)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub p: usize,
    pub mode: Method,
    pub lambda0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        let d = PartitionConfig::default();
        PartitionSection {
            p: 8,
            mode: Method::Adadne,
            lambda0: d.lambda0,
            alpha: d.alpha,
            beta: d.beta,
            tau: d.tau,
            seed: 1,
        }
    }
}

impl PartitionSection {
    /// Config for the neighbor-expansion modes; `Hash` maps to the default.
    pub fn to_config(&self) -> PartitionConfig {
        PartitionConfig {
            num_partitions: self.p,
            lambda0: self.lambda0,
            alpha: self.alpha,
            beta: self.beta,
            mode: if self.mode == Method::Dne { PartitionMode::Dne } else { PartitionMode::AdaDne },
            tau: self.tau,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub fanouts: Vec<u32>,
    pub batch_size: usize,
    pub batches: usize,
    pub direction: Direction,
    pub weighted: bool,
    pub rounding: Rounding,
    pub seed: u64,
    /// `host:port` per shard, in shard order; empty samples in process.
    pub shards: Vec<String>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            fanouts: vec![15, 10, 5],
            batch_size: 512,
            batches: 4,
            direction: Direction::Out,
            weighted: false,
            rounding: Rounding::Stochastic,
            seed: 1,
            shards: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReorderSection {
    pub algorithm: ReorderAlgorithm,
    pub degree: DegreeKind,
    pub ascending: bool,
    /// Chunk size used for the locality score.
    pub chunk_size: usize,
}

impl Default for ReorderSection {
    fn default() -> Self {
        ReorderSection {
            algorithm: ReorderAlgorithm::Pds,
            degree: DegreeKind::Total,
            ascending: false,
            chunk_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub chunk_size: usize,
    pub dynamic_frac: f64,
    pub fanout: Option<u32>,
    pub seed: u64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            layers: 2,
            input_dim: 16,
            hidden_dim: 16,
            chunk_size: glisp_core::inference::DEFAULT_CHUNK_SIZE,
            dynamic_frac: 0.10,
            fanout: None,
            seed: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
    }
}
