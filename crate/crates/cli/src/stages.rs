//! Pipeline stages. Each reads and writes fixed artifact names inside a
//! working directory so the stages compose without extra flags.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use glisp_core::graph::{load_edge_list, Graph, LoadOptions, VertexId};
use glisp_core::pstore::build_stores;
use glisp_core::sampler::{k_hop_sample, load_report, FanoutSpec, GatherShard, Routing, SamplingConfig, Shard};
use glisp_core::{
    adadne_partition, generate_power_law, hash_partition_1d, input_features, interior_boundary_report, layerwise_infer, locality_score,
    partition_stats, reorder_graph, samplewise_infer, GnnModel, InferenceConfig, PartitionAssignment, PartitionStore,
    Permutation, RemoteShard, WorkloadPlan,
};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{InferenceSection, Method, PartitionSection, ReorderSection, SamplerSection};
use crate::Usage;

pub const GRAPH: &str = "graph.tsv";
pub const PARTITION: &str = "partition.bin";
pub const PARTITION_CSV: &str = "partition.csv";
pub const INTERIOR_CSV: &str = "interior.csv";
pub const STORE: &str = "store";
pub const LOAD_CSV: &str = "load.csv";
pub const SAMPLE_CSV: &str = "sample.csv";
pub const PERMUTATION: &str = "permutation.bin";
pub const REORDER_CSV: &str = "reorder.csv";
pub const EMBEDDINGS: &str = "embeddings";
pub const CACHE_CSV: &str = "cache.csv";
pub const INFERENCE_CSV: &str = "inference.csv";
pub const REPORT_CSV: &str = "report.csv";

const REMOTE_TIMEOUT: Duration = Duration::from_secs(30);

/// Fails with a usage error naming the missing artifact and the stage that
/// produces it.
pub fn require(dir: &Path, name: &str, producer: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Usage(format!("missing {}; run `glisp {producer}` first", path.display())).into());
    }
    Ok(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

pub fn load_graph(dir: &Path) -> Result<Graph> {
    let path = require(dir, GRAPH, "generate")?;
    Ok(load_edge_list(&path, LoadOptions::typed_weighted())
        .with_context(|| format!("reading {}", path.display()))?)
}

pub fn load_partition(dir: &Path) -> Result<PartitionAssignment> {
    let path = require(dir, PARTITION, "partition")?;
    Ok(PartitionAssignment::load(&path).with_context(|| format!("reading {}", path.display()))?)
}

pub fn generate(dir: &Path, n: usize, m: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let g = generate_power_law(n, m, seed)?;
    g.save_edge_list(dir.join(GRAPH))?;
    info!("generated {} vertices, {} edges", g.num_vertices(), g.num_edges());
    Ok(())
}

/// Copies an external edge list into the working directory.
pub fn import_graph(dir: &Path, input: &Path) -> Result<()> {
    if !input.exists() {
        return Err(Usage(format!("graph input {} does not exist", input.display())).into());
    }
    fs::create_dir_all(dir)?;
    let g = load_edge_list(input, LoadOptions::default())?;
    g.save_edge_list(dir.join(GRAPH))?;
    Ok(())
}

pub fn partition(dir: &Path, section: &PartitionSection) -> Result<()> {
    let g = load_graph(dir)?;
    let a = match section.mode {
        Method::Hash => hash_partition_1d(&g, section.p, section.seed)?,
        _ => adadne_partition(&g, &section.to_config())?,
    };
    a.save(dir.join(PARTITION))?;
    let stats = partition_stats(&g, &a)?;
    let mut w = create(&dir.join(PARTITION_CSV))?;
    stats.write_csv(&mut w)?;
    w.flush()?;

    let interior = interior_boundary_report(&g, &a)?;
    let mut w = create(&dir.join(INTERIOR_CSV))?;
    writeln!(w, "partition,interior_fraction")?;
    for (p, f) in interior.per_partition.iter().enumerate() {
        writeln!(w, "{p},{f:.6}")?;
    }
    writeln!(w, "all,{:.6}", interior.interior_fraction)?;
    w.flush()?;
    let q = stats.quality;
    info!("partitioned into {}: rf={:.4} vb={:.4} eb={:.4}", section.p, q.rf, q.vb, q.eb);
    Ok(())
}

pub fn build_store(dir: &Path) -> Result<()> {
    let g = load_graph(dir)?;
    let a = load_partition(dir)?;
    let root = dir.join(STORE);
    fs::create_dir_all(&root)?;
    for store in build_stores(&g, &a)? {
        let path = root.join(format!("part{}", store.partition_id()));
        store.save(&path)?;
    }
    info!("wrote {} stores under {}", a.num_partitions(), root.display());
    Ok(())
}

fn load_stores(dir: &Path, p: usize) -> Result<Vec<PartitionStore>> {
    (0..p)
        .map(|i| {
            let name = format!("{STORE}/part{i}");
            let path = require(dir, &name, "build-store")?;
            Ok(PartitionStore::load(&path).with_context(|| format!("reading {}", path.display()))?)
        })
        .collect()
}

fn seed_batches(g: &Graph, s: &SamplerSection) -> Vec<Vec<VertexId>> {
    let mut vs = g.vertices().to_vec();
    vs.shuffle(&mut ChaCha8Rng::seed_from_u64(s.seed));
    vs.truncate(s.batch_size * s.batches);
    vs.chunks(s.batch_size.max(1)).map(|c| c.to_vec()).collect()
}

pub fn sample_bench(dir: &Path, s: &SamplerSection) -> Result<()> {
    let g = load_graph(dir)?;
    let a = load_partition(dir)?;
    let fan = FanoutSpec::new(s.fanouts.clone())?;
    if s.batch_size == 0 {
        return Err(Usage("batch size must be positive".into()).into());
    }
    let routing = Routing::from_assignment(&g, &a)?;
    let batches = seed_batches(&g, s);

    let run = |shards: &[&dyn GatherShard]| -> Result<Vec<(usize, usize, usize, usize)>> {
        let mut rows = Vec::new();
        for (b, seeds) in batches.iter().enumerate() {
            let cfg = SamplingConfig {
                direction: s.direction,
                weighted: s.weighted,
                edge_type: None,
                seed: s.seed.wrapping_add(b as u64),
                rounding: s.rounding,
            };
            let sub = k_hop_sample(shards, &routing, seeds, &fan, &cfg)?;
            for (h, hop) in sub.hops.iter().enumerate() {
                rows.push((b, h + 1, hop.seeds.len(), hop.edges.len()));
            }
        }
        Ok(rows)
    };

    let (rows, report) = if s.shards.is_empty() {
        let shards: Vec<Shard> = load_stores(dir, a.num_partitions())?.into_iter().map(Shard::new).collect();
        let refs: Vec<&dyn GatherShard> = shards.iter().map(|x| x as &dyn GatherShard).collect();
        (run(&refs)?, load_report(&refs)?)
    } else {
        if s.shards.len() != a.num_partitions() {
            return Err(Usage(format!(
                "{} shard addresses given for {} partitions",
                s.shards.len(),
                a.num_partitions()
            ))
            .into());
        }
        let mut clients = Vec::new();
        for addr in &s.shards {
            clients.push(RemoteShard::connect(addr.as_str(), REMOTE_TIMEOUT).with_context(|| format!("connecting to {addr}"))?);
        }
        clients.sort_by_key(|c| c.shard_id());
        let refs: Vec<&dyn GatherShard> = clients.iter().map(|x| x as &dyn GatherShard).collect();
        (run(&refs)?, load_report(&refs)?)
    };

    let mut w = create(&dir.join(SAMPLE_CSV))?;
    writeln!(w, "batch,hop,seeds,edges")?;
    for (b, h, seeds, edges) in rows {
        writeln!(w, "{b},{h},{seeds},{edges}")?;
    }
    w.flush()?;
    let mut w = create(&dir.join(LOAD_CSV))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    info!("max normalized load {:.4}", report.max_normalized());
    Ok(())
}

pub fn reorder(dir: &Path, r: &ReorderSection) -> Result<()> {
    let g = load_graph(dir)?;
    let a = load_partition(dir)?;
    let perm = reorder_graph(&g, Some(&a), r.algorithm, r.degree, r.ascending)?;
    perm.save(dir.join(PERMUTATION))?;
    let score = locality_score(&g, &perm, r.chunk_size)?;
    let mut w = create(&dir.join(REORDER_CSV))?;
    writeln!(w, "algorithm,chunk_size,mean_chunk_span,mean_neighbor_gap")?;
    writeln!(
        w,
        "{},{},{:.6},{:.6}",
        r.algorithm, r.chunk_size, score.mean_chunk_span, score.mean_neighbor_gap
    )?;
    w.flush()?;
    Ok(())
}

/// `reorder` overrides the permutation written by the reorder stage.
pub fn infer(dir: &Path, inf: &InferenceSection, reorder: Option<&ReorderSection>, samplewise: bool) -> Result<()> {
    let g = load_graph(dir)?;
    let a = load_partition(dir)?;
    if inf.layers == 0 {
        return Err(Usage("need at least one layer".into()).into());
    }
    let perm = match reorder {
        Some(r) => reorder_graph(&g, Some(&a), r.algorithm, r.degree, r.ascending)?,
        None => Permutation::load(require(dir, PERMUTATION, "reorder")?)?,
    };
    if perm.len() != g.num_vertices() {
        return Err(Usage(format!(
            "{} covers {} vertices but the graph has {}; rerun `glisp reorder`",
            dir.join(PERMUTATION).display(),
            perm.len(),
            g.num_vertices()
        ))
        .into());
    }
    let mut dims = vec![inf.input_dim];
    dims.extend(std::iter::repeat_n(inf.hidden_dim, inf.layers));
    let model = GnnModel::seeded(&dims, inf.seed)?;
    let x = input_features(&g, inf.input_dim, inf.seed);
    let plan = WorkloadPlan::new(&g, &a, perm)?;
    let cfg = InferenceConfig {
        chunk_size: inf.chunk_size,
        dynamic_frac: inf.dynamic_frac,
        fanout: inf.fanout,
        seed: inf.seed,
    };
    let out = layerwise_infer(&model, &g, &a, &plan, &x, &dir.join(EMBEDDINGS), &cfg)?;
    let counters = out.counters();

    let mut w = create(&dir.join(CACHE_CSV))?;
    counters.write_csv(&mut w)?;
    w.flush()?;

    let (sw_count, diff) = if samplewise {
        let (emb, count) = samplewise_infer(&model, &g, &x)?;
        (count.to_string(), format!("{:e}", out.embeddings.max_relative_diff(&emb)))
    } else {
        (String::new(), String::new())
    };
    let mut w = create(&dir.join(INFERENCE_CSV))?;
    writeln!(w, "layers,vertices,layerwise_invocations,samplewise_invocations,max_rel_diff,backing_reads")?;
    writeln!(
        w,
        "{},{},{},{},{},{}",
        inf.layers,
        g.num_vertices(),
        out.invocations,
        sw_count,
        diff,
        counters.backing_reads
    )?;
    w.flush()?;
    info!(
        "inference: {} invocations, {} chunks fetched, hit ratio {:.4}",
        out.invocations,
        counters.chunks_fetched,
        counters.hit_ratio()
    );
    Ok(())
}
