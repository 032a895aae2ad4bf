//! Gather-Apply K-hop neighbor sampling over sharded partition stores.
//!
//! Every hop the client sends the frontier to each shard hosting a frontier
//! vertex (Gather), then merges the per-shard partial results per seed
//! (Apply). All randomness comes from generators keyed by
//! `(global seed, vertex, hop, shard)`, so a gather answered in-process or by
//! a remote server returns the same draws.

mod algorithms;
mod load;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, EdgeType, Graph, VertexId};
use crate::partition::{PartitionAssignment, PartitionId};
use crate::pstore::PartitionStore;

pub use algorithms::{aes_key, algorithm_a_es, algorithm_d};
pub use load::{load_report, LoadEntry, LoadReport};

/// Shard slot used for the client-side Apply step.
pub const APPLY_SHARD: u32 = u32::MAX;

/// Generator for one `(seed vertex, hop, shard)` draw sequence.
pub fn keyed_rng(seed: u64, vertex: VertexId, hop: u32, shard: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&vertex.to_le_bytes());
    key[16..20].copy_from_slice(&hop.to_le_bytes());
    key[20..24].copy_from_slice(&shard.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// How a fractional per-shard target `f * local / global` becomes a count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// `floor(r) + Bernoulli(frac(r))`, unbiased.
    #[default]
    Stochastic,
    /// `floor(r)`.
    ExpectedFloor,
    /// The client splits `f` across shards by a multivariate hypergeometric
    /// draw over local degrees and sends explicit counts.
    Hypergeometric,
}

impl std::str::FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(Rounding::Stochastic),
            "expected-floor" => Ok(Rounding::ExpectedFloor),
            "hypergeometric" => Ok(Rounding::Hypergeometric),
            other => Err(Error::InvalidArgument(format!("unknown rounding mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub direction: Direction,
    pub weighted: bool,
    pub edge_type: Option<EdgeType>,
    pub seed: u64,
    pub rounding: Rounding,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            direction: Direction::Out,
            weighted: false,
            edge_type: None,
            seed: 0,
            rounding: Rounding::Stochastic,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.direction == Direction::Both {
            return Err(Error::InvalidArgument(
                "sampling direction must be `in` or `out`".into(),
            ));
        }
        Ok(())
    }
}

/// Per-hop fanouts; all at least 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FanoutSpec(Vec<u32>);

impl FanoutSpec {
    pub fn new(fanouts: Vec<u32>) -> Result<Self> {
        if fanouts.is_empty() || fanouts.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "fanouts must be non-empty and positive, got {fanouts:?}"
            )));
        }
        Ok(FanoutSpec(fanouts))
    }

    pub fn hops(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

impl std::str::FromStr for FanoutSpec {
    type Err = Error;

    /// Comma separated, e.g. `15,10,5`.
    fn from_str(s: &str) -> Result<Self> {
        let v = s
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::InvalidArgument(format!("bad fanout `{x}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        FanoutSpec::new(v)
    }
}

/// Per-seed target count policy for a uniform gather.
#[derive(Clone, Debug, PartialEq)]
pub enum Quota {
    /// `f * local / global` with the stored global degree.
    Proportional,
    /// `f * local / global` with a client-supplied global degree per seed.
    GlobalDegrees(Vec<u64>),
    /// Exact per-seed counts for this shard.
    Explicit(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatherRequest {
    pub seeds: Vec<VertexId>,
    pub fanout: u32,
    pub hop: u32,
    pub direction: Direction,
    pub edge_type: Option<EdgeType>,
    pub rng_seed: u64,
    pub rounding: Rounding,
    pub quota: Quota,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub vertex: VertexId,
    /// Edge id within the owning shard.
    pub edge_id: u64,
    pub shard: PartitionId,
    /// Log A-ES key; zero for uniform sampling.
    pub score: f64,
}

/// Partial results aligned with the request's seeds; `None` marks a seed the
/// shard does not host.
#[derive(Clone, Debug, PartialEq)]
pub struct GatherResponse {
    pub shard: PartitionId,
    pub partials: Vec<Option<Vec<Neighbor>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegreeRequest {
    pub seeds: Vec<VertexId>,
    pub direction: Direction,
    pub edge_type: Option<EdgeType>,
}

/// `(local, global)` per seed; global is the unfiltered original-graph degree.
pub type DegreeResponse = Vec<Option<(u64, u64)>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardCounters {
    pub requests: u64,
    pub seeds: u64,
    pub edges_scanned: u64,
    pub busy_nanos: u64,
}

/// Anything that can answer gathers for one partition: an in-process shard or
/// a remote client.
pub trait GatherShard: Sync {
    fn shard_id(&self) -> PartitionId;
    fn uniform_gather(&self, req: &GatherRequest) -> Result<GatherResponse>;
    fn weighted_gather(&self, req: &GatherRequest) -> Result<GatherResponse>;
    fn degrees(&self, req: &DegreeRequest) -> Result<DegreeResponse>;
    fn counters(&self) -> Result<ShardCounters>;
}

/// A partition store with atomic request counters.
#[derive(Debug)]
pub struct Shard {
    store: PartitionStore,
    requests: AtomicU64,
    seeds: AtomicU64,
    edges_scanned: AtomicU64,
    busy_nanos: AtomicU64,
}

enum Candidates<'a> {
    Out(std::ops::Range<usize>),
    In(&'a [u64]),
}

impl Candidates<'_> {
    fn len(&self) -> usize {
        match self {
            Candidates::Out(r) => r.len(),
            Candidates::In(ids) => ids.len(),
        }
    }

    fn edge(&self, i: usize) -> usize {
        match self {
            Candidates::Out(r) => r.start + i,
            Candidates::In(ids) => ids[i] as usize,
        }
    }
}

impl Shard {
    pub fn new(store: PartitionStore) -> Self {
        Shard {
            store,
            requests: AtomicU64::new(0),
            seeds: AtomicU64::new(0),
            edges_scanned: AtomicU64::new(0),
            busy_nanos: AtomicU64::new(0),
        }
    }

    pub fn store(&self) -> &PartitionStore {
        &self.store
    }

    pub fn reset_counters(&self) {
        for c in [&self.requests, &self.seeds, &self.edges_scanned, &self.busy_nanos] {
            c.store(0, Ordering::Relaxed);
        }
    }

    fn candidates(
        &self,
        local: usize,
        direction: Direction,
        edge_type: Option<EdgeType>,
    ) -> Result<Candidates<'_>> {
        match direction {
            Direction::Out => Ok(Candidates::Out(
                self.store.out_neighbors(local, edge_type)?.edge_ids(),
            )),
            Direction::In => Ok(Candidates::In(self.store.in_edge_ids(local, edge_type)?)),
            Direction::Both => Err(Error::InvalidArgument(
                "sampling direction must be `in` or `out`".into(),
            )),
        }
    }

    fn neighbor(&self, edge: usize, direction: Direction, score: f64) -> Neighbor {
        let vertex = match direction {
            Direction::In => self.store.in_source_of(edge).expect("edge id from store"),
            _ => self.store.edge_dst(edge).expect("edge id from store"),
        };
        Neighbor {
            vertex,
            edge_id: edge as u64,
            shard: self.store.partition_id(),
            score,
        }
    }

    fn record(&self, seeds: usize, scanned: u64, started: Instant) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.seeds.fetch_add(seeds as u64, Ordering::Relaxed);
        self.edges_scanned.fetch_add(scanned, Ordering::Relaxed);
        self.busy_nanos
            .fetch_add(started.elapsed().as_nanos() as u64, Ordering::Relaxed);
    }

    fn check_quota(req: &GatherRequest) -> Result<()> {
        let len = match &req.quota {
            Quota::Proportional => return Ok(()),
            Quota::GlobalDegrees(d) => d.len(),
            Quota::Explicit(c) => c.len(),
        };
        if len != req.seeds.len() {
            return Err(Error::InvalidArgument(format!(
                "quota has {len} entries for {} seeds",
                req.seeds.len()
            )));
        }
        Ok(())
    }
}

/// Realized per-shard count for a fractional target `r`, capped at `local`.
fn realize<R: Rng>(r: f64, local: usize, rounding: Rounding, rng: &mut R) -> usize {
    let floor = r.floor();
    let mut k = floor as usize;
    if rounding == Rounding::Stochastic && rng.gen::<f64>() < r - floor {
        k += 1;
    }
    k.min(local)
}

impl GatherShard for Shard {
    fn shard_id(&self) -> PartitionId {
        self.store.partition_id()
    }

    fn uniform_gather(&self, req: &GatherRequest) -> Result<GatherResponse> {
        Self::check_quota(req)?;
        let started = Instant::now();
        let shard = self.shard_id();
        let mut scanned = 0u64;
        let mut partials = Vec::with_capacity(req.seeds.len());
        for (i, &seed) in req.seeds.iter().enumerate() {
            let Ok(local) = self.store.local_id(seed) else {
                partials.push(None);
                continue;
            };
            let cands = self.candidates(local, req.direction, req.edge_type)?;
            let local_deg = cands.len();
            scanned += local_deg as u64;
            let mut rng = keyed_rng(req.rng_seed, seed, req.hop, shard as u32);
            let k = match &req.quota {
                Quota::Explicit(counts) => (counts[i] as usize).min(local_deg),
                quota => {
                    let global = match quota {
                        Quota::GlobalDegrees(d) => d[i] as usize,
                        _ => self.store.global_degree(local, req.direction)?,
                    };
                    if global == 0 || local_deg == 0 {
                        0
                    } else {
                        let r = req.fanout as f64 * local_deg as f64 / global as f64;
                        realize(r, local_deg, req.rounding, &mut rng)
                    }
                }
            };
            let picks = algorithm_d(local_deg, k, &mut rng)?;
            partials.push(Some(
                picks
                    .into_iter()
                    .map(|j| self.neighbor(cands.edge(j), req.direction, 0.0))
                    .collect(),
            ));
        }
        self.record(req.seeds.len(), scanned, started);
        Ok(GatherResponse { shard, partials })
    }

    fn weighted_gather(&self, req: &GatherRequest) -> Result<GatherResponse> {
        let started = Instant::now();
        let shard = self.shard_id();
        let mut scanned = 0u64;
        let mut partials = Vec::with_capacity(req.seeds.len());
        let mut weights = Vec::new();
        let mut edges = Vec::new();
        for &seed in &req.seeds {
            let Ok(local) = self.store.local_id(seed) else {
                partials.push(None);
                continue;
            };
            let cands = self.candidates(local, req.direction, req.edge_type)?;
            scanned += cands.len() as u64;
            // zero-weight edges can never be drawn
            weights.clear();
            edges.clear();
            for j in 0..cands.len() {
                let e = cands.edge(j);
                let w = self.store.edge_weight(e)?;
                if w > 0.0 {
                    weights.push(w);
                    edges.push(e);
                }
            }
            let mut rng = keyed_rng(req.rng_seed, seed, req.hop, shard as u32);
            let k = (req.fanout as usize).min(weights.len());
            let (picks, keys) = algorithm_a_es(&weights, k, &mut rng)?;
            partials.push(Some(
                picks
                    .into_iter()
                    .zip(keys)
                    .map(|(j, key)| self.neighbor(edges[j], req.direction, key))
                    .collect(),
            ));
        }
        self.record(req.seeds.len(), scanned, started);
        Ok(GatherResponse { shard, partials })
    }

    fn degrees(&self, req: &DegreeRequest) -> Result<DegreeResponse> {
        req.seeds
            .iter()
            .map(|&v| {
                let Ok(local) = self.store.local_id(v) else {
                    return Ok(None);
                };
                let l = match req.edge_type {
                    None => self.store.local_degree(local, req.direction)?,
                    Some(t) => self.store.local_typed_degree(local, req.direction, t)?,
                };
                let g = self.store.global_degree(local, req.direction)?;
                Ok(Some((l as u64, g as u64)))
            })
            .collect()
    }

    fn counters(&self) -> Result<ShardCounters> {
        Ok(ShardCounters {
            requests: self.requests.load(Ordering::Relaxed),
            seeds: self.seeds.load(Ordering::Relaxed),
            edges_scanned: self.edges_scanned.load(Ordering::Relaxed),
            busy_nanos: self.busy_nanos.load(Ordering::Relaxed),
        })
    }
}

/// Merges per-shard partials for one seed: partials are taken in shard order,
/// duplicates of the same edge dropped, and an over-full result trimmed to `f`
/// by a uniform subsample keyed on the seed.
pub fn uniform_apply(
    partials: &[(PartitionId, Vec<Neighbor>)],
    fanout: u32,
    rng_seed: u64,
    seed_vertex: VertexId,
    hop: u32,
) -> Vec<Neighbor> {
    let mut merged = merge_partials(partials);
    let f = fanout as usize;
    if merged.len() > f {
        let mut rng = keyed_rng(rng_seed, seed_vertex, hop, APPLY_SHARD);
        let keep = algorithm_d(merged.len(), f, &mut rng).expect("f below merged size");
        merged = keep.into_iter().map(|i| merged[i]).collect();
    }
    merged
}

/// Global top-`f` by score; ties go to the lower `(shard, edge id)`.
pub fn weighted_apply(partials: &[(PartitionId, Vec<Neighbor>)], fanout: u32) -> Vec<Neighbor> {
    let mut merged = merge_partials(partials);
    merged.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.shard.cmp(&b.shard))
            .then(a.edge_id.cmp(&b.edge_id))
    });
    merged.truncate(fanout as usize);
    merged.sort_by_key(|n| (n.shard, n.edge_id));
    merged
}

fn merge_partials(partials: &[(PartitionId, Vec<Neighbor>)]) -> Vec<Neighbor> {
    let mut order: Vec<&(PartitionId, Vec<Neighbor>)> = partials.iter().collect();
    order.sort_by_key(|(s, _)| *s);
    let mut merged: Vec<Neighbor> = order.iter().flat_map(|(_, n)| n.iter().copied()).collect();
    merged.sort_by_key(|n| (n.shard, n.edge_id));
    merged.dedup_by_key(|n| (n.shard, n.edge_id));
    merged
}

/// Vertex to hosting-partition map used to route gathers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Routing {
    vertices: Vec<VertexId>,
    offsets: Vec<usize>,
    partitions: Vec<PartitionId>,
}

impl Routing {
    pub fn from_assignment(g: &Graph, a: &PartitionAssignment) -> Result<Self> {
        let memberships = a.vertex_partitions(g)?;
        let mut r = Routing {
            offsets: vec![0],
            ..Default::default()
        };
        for (ix, parts) in memberships.iter().enumerate() {
            if parts.is_empty() {
                continue;
            }
            r.vertices.push(g.vertices()[ix]);
            r.partitions.extend_from_slice(parts);
            r.offsets.push(r.partitions.len());
        }
        Ok(r)
    }

    /// Reconstructs routing from the partition sets the stores carry.
    pub fn from_stores<'a>(stores: impl IntoIterator<Item = &'a PartitionStore>) -> Result<Self> {
        let mut pairs: Vec<(VertexId, Vec<PartitionId>)> = Vec::new();
        for s in stores {
            for l in 0..s.num_vertices() {
                pairs.push((s.global_id(l)?, s.partitions_of(l)?));
            }
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        let mut r = Routing {
            offsets: vec![0],
            ..Default::default()
        };
        for (v, parts) in pairs {
            r.vertices.push(v);
            r.partitions.extend(parts);
            r.offsets.push(r.partitions.len());
        }
        Ok(r)
    }

    pub fn partitions(&self, v: VertexId) -> Option<&[PartitionId]> {
        let i = self.vertices.binary_search(&v).ok()?;
        Some(&self.partitions[self.offsets[i]..self.offsets[i + 1]])
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledEdge {
    pub src: VertexId,
    pub dst: VertexId,
    pub edge_id: u64,
    pub shard: PartitionId,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampledHop {
    /// Seeds this hop expanded, ascending.
    pub seeds: Vec<VertexId>,
    /// Sampled edges grouped by seed in seed order.
    pub edges: Vec<SampledEdge>,
    /// Distinct sampled neighbors, ascending; the next hop's seeds.
    pub frontier: Vec<VertexId>,
    /// How many times each frontier vertex was sampled in this hop.
    pub multiplicity: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampledSubgraph {
    pub hops: Vec<SampledHop>,
}

impl SampledSubgraph {
    /// Hop-tagged TSV: `hop src dst shard edge_id`, hops counted from 1.
    pub fn write_tsv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for (h, hop) in self.hops.iter().enumerate() {
            for e in &hop.edges {
                writeln!(w, "{}\t{}\t{}\t{}\t{}", h + 1, e.src, e.dst, e.shard, e.edge_id)?;
            }
        }
        Ok(())
    }

    pub fn num_edges(&self) -> usize {
        self.hops.iter().map(|h| h.edges.len()).sum()
    }
}

/// Issues one gather per shard in parallel; results come back in shard order.
fn gather_all<S: GatherShard + ?Sized>(
    shards: &[&S],
    requests: Vec<(usize, GatherRequest)>,
    weighted: bool,
) -> Result<Vec<(usize, GatherRequest, GatherResponse)>> {
    let run = |slot: usize, req: &GatherRequest| {
        let s = shards[slot];
        if weighted {
            s.weighted_gather(req)
        } else {
            s.uniform_gather(req)
        }
    };
    if requests.len() <= 1 {
        return requests
            .into_iter()
            .map(|(slot, req)| {
                let resp = run(slot, &req)?;
                Ok((slot, req, resp))
            })
            .collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = requests
            .into_iter()
            .map(|(slot, req)| {
                scope.spawn(move || {
                    let resp = run(slot, &req);
                    resp.map(|r| (slot, req, r))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gather thread panicked"))
            .collect()
    })
}

/// Multivariate hypergeometric split of `f` draws over shards holding
/// `locals[i]` of the seed's edges.
fn hypergeometric_split<R: Rng>(locals: &[u64], f: u32, rng: &mut R) -> Vec<u32> {
    let total: u64 = locals.iter().sum();
    let k = (f as u64).min(total) as usize;
    let picks = algorithm_d(total as usize, k, rng).expect("k capped at total");
    let mut counts = vec![0u32; locals.len()];
    let mut bound = 0u64;
    let mut slot = 0usize;
    for p in picks {
        while p as u64 >= bound + locals[slot] {
            bound += locals[slot];
            slot += 1;
        }
        counts[slot] += 1;
    }
    counts
}

/// K rounds of Gather then Apply starting from `seeds`.
///
/// `shards` may be given in any order; each is addressed by its partition id.
pub fn k_hop_sample<S: GatherShard + ?Sized>(
    shards: &[&S],
    routing: &Routing,
    seeds: &[VertexId],
    fanouts: &FanoutSpec,
    cfg: &SamplingConfig,
) -> Result<SampledSubgraph> {
    cfg.validate()?;
    let unknown: Vec<VertexId> = seeds
        .iter()
        .copied()
        .filter(|&v| routing.partitions(v).is_none())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownSeeds(unknown));
    }
    let max_pid = shards.iter().map(|s| s.shard_id() as usize).max().unwrap_or(0);
    let mut slot_of = vec![usize::MAX; max_pid + 1];
    for (i, s) in shards.iter().enumerate() {
        slot_of[s.shard_id() as usize] = i;
    }

    let mut frontier: Vec<VertexId> = seeds.to_vec();
    frontier.sort_unstable();
    frontier.dedup();
    let mut out = SampledSubgraph::default();

    for (h, &f) in fanouts.as_slice().iter().enumerate() {
        let hop = h as u32;
        // seeds grouped by shard, each group in ascending vertex order
        let mut groups: Vec<Vec<VertexId>> = vec![Vec::new(); shards.len()];
        for &v in &frontier {
            for &p in routing.partitions(v).expect("frontier vertices are routed") {
                let slot = slot_of.get(p as usize).copied().unwrap_or(usize::MAX);
                if slot == usize::MAX {
                    return Err(Error::ShardUnavailable {
                        shard: p,
                        reason: "no client for this partition".into(),
                    });
                }
                groups[slot].push(v);
            }
        }

        let quotas = plan_quotas(shards, &groups, &frontier, f, hop, cfg)?;
        let requests: Vec<(usize, GatherRequest)> = groups
            .into_iter()
            .zip(quotas)
            .enumerate()
            .filter(|(_, (g, _))| !g.is_empty())
            .map(|(slot, (seeds, quota))| {
                (
                    slot,
                    GatherRequest {
                        seeds,
                        fanout: f,
                        hop,
                        direction: cfg.direction,
                        edge_type: cfg.edge_type,
                        rng_seed: cfg.seed,
                        rounding: cfg.rounding,
                        quota,
                    },
                )
            })
            .collect();

        let responses = gather_all(shards, requests, cfg.weighted)?;
        let mut per_seed: Vec<Vec<(PartitionId, Vec<Neighbor>)>> = vec![Vec::new(); frontier.len()];
        for (_, req, resp) in responses {
            if resp.partials.len() != req.seeds.len() {
                return Err(Error::Protocol(format!(
                    "shard {} answered {} partials for {} seeds",
                    resp.shard,
                    resp.partials.len(),
                    req.seeds.len()
                )));
            }
            for (v, partial) in req.seeds.iter().zip(resp.partials) {
                let i = frontier.binary_search(v).expect("requested from frontier");
                match partial {
                    Some(n) => per_seed[i].push((resp.shard, n)),
                    None => {
                        return Err(Error::Protocol(format!(
                            "shard {} does not host routed vertex {v}",
                            resp.shard
                        )))
                    }
                }
            }
        }

        let mut layer = SampledHop {
            seeds: frontier.clone(),
            ..Default::default()
        };
        let mut next: Vec<VertexId> = Vec::new();
        for (i, &v) in frontier.iter().enumerate() {
            let picked = if cfg.weighted {
                weighted_apply(&per_seed[i], f)
            } else {
                uniform_apply(&per_seed[i], f, cfg.seed, v, hop)
            };
            for n in picked {
                let (src, dst) = match cfg.direction {
                    Direction::In => (n.vertex, v),
                    _ => (v, n.vertex),
                };
                layer.edges.push(SampledEdge {
                    src,
                    dst,
                    edge_id: n.edge_id,
                    shard: n.shard,
                });
                next.push(n.vertex);
            }
        }
        next.sort_unstable();
        for chunk in next.chunk_by(|a, b| a == b) {
            layer.frontier.push(chunk[0]);
            layer.multiplicity.push(chunk.len() as u32);
        }
        frontier = layer.frontier.clone();
        out.hops.push(layer);
        if frontier.is_empty() {
            break;
        }
    }
    Ok(out)
}

fn plan_quotas<S: GatherShard + ?Sized>(
    shards: &[&S],
    groups: &[Vec<VertexId>],
    frontier: &[VertexId],
    f: u32,
    hop: u32,
    cfg: &SamplingConfig,
) -> Result<Vec<Quota>> {
    if cfg.weighted || (cfg.edge_type.is_none() && cfg.rounding != Rounding::Hypergeometric) {
        return Ok(vec![Quota::Proportional; groups.len()]);
    }
    // typed or hypergeometric sampling needs every shard's local degree first
    let mut locals: Vec<Vec<u64>> = Vec::with_capacity(groups.len());
    let mut per_vertex: Vec<Vec<(usize, u64)>> = vec![Vec::new(); frontier.len()];
    for (slot, g) in groups.iter().enumerate() {
        if g.is_empty() {
            locals.push(Vec::new());
            continue;
        }
        let resp = shards[slot].degrees(&DegreeRequest {
            seeds: g.clone(),
            direction: cfg.direction,
            edge_type: cfg.edge_type,
        })?;
        let l: Vec<u64> = resp.iter().map(|d| d.map_or(0, |(l, _)| l)).collect();
        for (v, &d) in g.iter().zip(&l) {
            let i = frontier.binary_search(v).expect("grouped from frontier");
            per_vertex[i].push((slot, d));
        }
        locals.push(l);
    }

    if cfg.rounding == Rounding::Hypergeometric {
        let mut counts: Vec<Vec<u32>> = groups.iter().map(|g| vec![0; g.len()]).collect();
        for (i, &v) in frontier.iter().enumerate() {
            let mut parts = per_vertex[i].clone();
            parts.sort_unstable();
            let l: Vec<u64> = parts.iter().map(|&(_, d)| d).collect();
            let mut rng = keyed_rng(cfg.seed, v, hop, APPLY_SHARD - 1);
            for ((slot, _), c) in parts.iter().zip(hypergeometric_split(&l, f, &mut rng)) {
                let j = groups[*slot].binary_search(&v).expect("vertex in group");
                counts[*slot][j] = c;
            }
        }
        return Ok(counts.into_iter().map(Quota::Explicit).collect());
    }

    let totals: Vec<u64> = per_vertex
        .iter()
        .map(|p| p.iter().map(|&(_, d)| d).sum())
        .collect();
    Ok(groups
        .iter()
        .map(|g| {
            Quota::GlobalDegrees(
                g.iter()
                    .map(|v| totals[frontier.binary_search(v).expect("grouped from frontier")])
                    .collect(),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::pstore::build_stores;

    fn star(split: Option<Vec<u16>>) -> (Vec<Shard>, Routing) {
        let edges: Vec<Edge> = (1..=5).map(|d| Edge::new(0, d)).collect();
        let g = Graph::from_edges(edges).unwrap();
        let parts = split.unwrap_or(vec![0; 5]);
        let p = *parts.iter().max().unwrap() as usize + 1;
        let a = PartitionAssignment::new(p, parts).unwrap();
        let shards = build_stores(&g, &a).unwrap().into_iter().map(Shard::new).collect();
        (shards, Routing::from_assignment(&g, &a).unwrap())
    }

    fn refs(shards: &[Shard]) -> Vec<&Shard> {
        shards.iter().collect()
    }

    fn leaves(s: &SampledSubgraph) -> Vec<VertexId> {
        let mut v: Vec<_> = s.hops[0].edges.iter().map(|e| e.dst).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn star_full_fanout_one_shard() {
        let (shards, routing) = star(None);
        let fan = FanoutSpec::new(vec![5]).unwrap();
        let s = k_hop_sample(&refs(&shards), &routing, &[0], &fan, &SamplingConfig::default()).unwrap();
        assert_eq!(leaves(&s), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn star_split_across_two_shards() {
        let (shards, routing) = star(Some(vec![0, 0, 0, 1, 1]));
        let fan = FanoutSpec::new(vec![5]).unwrap();
        let s = k_hop_sample(&refs(&shards), &routing, &[0], &fan, &SamplingConfig::default()).unwrap();
        assert_eq!(leaves(&s), vec![1, 2, 3, 4, 5]);
        let shards_used: std::collections::BTreeSet<_> = s.hops[0].edges.iter().map(|e| e.shard).collect();
        assert_eq!(shards_used.len(), 2);
    }

    #[test]
    fn fanout_three_gives_three_distinct() {
        let (shards, routing) = star(None);
        let fan = FanoutSpec::new(vec![3]).unwrap();
        for seed in 0..50 {
            let cfg = SamplingConfig { seed, ..Default::default() };
            let l = leaves(&k_hop_sample(&refs(&shards), &routing, &[0], &fan, &cfg).unwrap());
            assert_eq!(l.len(), 3);
            assert!(l.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn unknown_seed_is_listed() {
        let (shards, routing) = star(None);
        let fan = FanoutSpec::new(vec![3]).unwrap();
        let err = k_hop_sample(&refs(&shards), &routing, &[0, 42, 99], &fan, &SamplingConfig::default());
        assert!(matches!(err, Err(Error::UnknownSeeds(v)) if v == vec![42, 99]));
    }

    fn gather(shard: &Shard, seed: VertexId, f: u32, rng_seed: u64) -> Option<Vec<Neighbor>> {
        let req = GatherRequest {
            seeds: vec![seed],
            fanout: f,
            hop: 0,
            direction: Direction::Out,
            edge_type: None,
            rng_seed,
            rounding: Rounding::Stochastic,
            quota: Quota::Proportional,
        };
        shard.uniform_gather(&req).unwrap().partials.pop().unwrap()
    }

    /// Center with `global` out-edges of which the first `local` sit on shard 0.
    fn split_center(local: usize, global: usize) -> Shard {
        let edges: Vec<Edge> = (1..=global as u64).map(|d| Edge::new(0, d)).collect();
        let g = Graph::from_edges(edges).unwrap();
        let parts = (0..global).map(|i| if i < local { 0 } else { 1 }).collect();
        let a = PartitionAssignment::new(2, parts).unwrap();
        Shard::new(crate::pstore::build_store(&g, &a, 0).unwrap())
    }

    #[test]
    fn integral_ratio_is_exact() {
        let shard = split_center(4, 8);
        for s in 0..20 {
            assert_eq!(gather(&shard, 0, 10, s).unwrap().len(), 4);
        }
        let shard = split_center(8, 16);
        for s in 0..20 {
            assert_eq!(gather(&shard, 0, 10, s).unwrap().len(), 5);
        }
    }

    #[test]
    fn interior_vertex_takes_min_of_fanout_and_degree() {
        let shard = split_center(6, 6);
        assert_eq!(gather(&shard, 0, 4, 1).unwrap().len(), 4);
        assert_eq!(gather(&shard, 0, 10, 1).unwrap().len(), 6);
    }

    #[test]
    fn count_is_capped_by_local_degree() {
        // r = 15 * 3 / 10 = 4.5 but only 3 local edges exist
        let shard = split_center(3, 10);
        for s in 0..200 {
            assert_eq!(gather(&shard, 0, 15, s).unwrap().len(), 3);
        }
    }

    #[test]
    fn stochastic_rounding_is_unbiased() {
        // r = 10 * 3 / 20 = 1.5
        let shard = split_center(3, 20);
        let trials = 10_000u64;
        let total: usize = (0..trials).map(|s| gather(&shard, 0, 10, s).unwrap().len()).sum();
        let mean = total as f64 / trials as f64;
        // each draw is 1 or 2 with p = 0.5, sigma of the mean is 0.005
        assert!((mean - 1.5).abs() < 0.015, "{mean}");
    }

    #[test]
    fn absent_seed_gets_marker() {
        let shard = split_center(3, 10);
        assert!(gather(&shard, 1234, 5, 0).is_none());
    }

    fn nb(shard: u16, edge: u64, score: f64) -> Neighbor {
        Neighbor { vertex: edge * 10, edge_id: edge, shard, score }
    }

    #[test]
    fn uniform_apply_merges_and_trims() {
        let a = vec![nb(0, 1, 0.0), nb(0, 2, 0.0)];
        let b = vec![nb(1, 1, 0.0), nb(1, 2, 0.0), nb(1, 3, 0.0)];
        let merged = uniform_apply(&[(1, b.clone()), (0, a.clone())], 5, 0, 7, 0);
        assert_eq!(merged.len(), 5);
        assert_eq!(uniform_apply(&[(0, a.clone())], 5, 0, 7, 0), a);
        let dup = uniform_apply(&[(0, a.clone()), (0, a.clone())], 5, 0, 7, 0);
        assert_eq!(dup, a);
        for s in 0..1000 {
            let four_a: Vec<_> = (0..4).map(|e| nb(0, e, 0.0)).collect();
            let four_b: Vec<_> = (0..4).map(|e| nb(1, e, 0.0)).collect();
            assert_eq!(uniform_apply(&[(0, four_a), (1, four_b)], 5, s, 7, 0).len(), 5);
        }
    }

    #[test]
    fn weighted_apply_top_f_with_tie_break() {
        let a = vec![nb(0, 1, -0.5), nb(0, 2, -0.1)];
        let b = vec![nb(1, 0, -0.1), nb(1, 3, -2.0)];
        let top = weighted_apply(&[(1, b), (0, a.clone())], 2);
        assert_eq!(top, vec![nb(0, 2, -0.1), nb(1, 0, -0.1)]);
        let tie = weighted_apply(&[(0, vec![nb(0, 5, -1.0)]), (1, vec![nb(1, 0, -1.0)])], 1);
        assert_eq!(tie, vec![nb(0, 5, -1.0)]);
        assert_eq!(weighted_apply(&[(0, a.clone()), (1, vec![])], 2), a);
    }

    #[test]
    fn hypergeometric_split_sums_to_f() {
        let mut rng = keyed_rng(1, 2, 3, 4);
        for _ in 0..100 {
            let c = hypergeometric_split(&[3, 0, 5, 2], 6, &mut rng);
            assert_eq!(c.iter().sum::<u32>(), 6);
            assert!(c[0] <= 3 && c[1] == 0 && c[2] <= 5 && c[3] <= 2);
        }
        assert_eq!(hypergeometric_split(&[1, 1], 9, &mut rng), vec![1, 1]);
    }

    #[test]
    fn keyed_rng_is_position_independent() {
        let mut a = keyed_rng(1, 2, 3, 4);
        let mut b = keyed_rng(1, 2, 3, 4);
        let mut c = keyed_rng(1, 2, 3, 5);
        let x: u64 = a.gen();
        assert_eq!(x, b.gen::<u64>());
        assert_ne!(x, c.gen::<u64>());
    }

    #[test]
    fn fanout_spec_parsing() {
        let f: FanoutSpec = "15, 10,5".parse().unwrap();
        assert_eq!(f.as_slice(), &[15, 10, 5]);
        assert!("".parse::<FanoutSpec>().is_err());
        assert!("3,0".parse::<FanoutSpec>().is_err());
    }
}
