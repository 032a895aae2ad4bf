//! Full-graph GNN inference. The layerwise engine computes each layer once
//! for every vertex, one worker per partition, reading the previous layer
//! through a static row tier and a FIFO chunk tier. The samplewise engine
//! evaluates every vertex on its own K-hop ball and serves as the reference.

mod cache;
mod store;

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cache::{dynamic_capacity, CacheCounters, ChunkPolicy, FifoCache};
pub use store::{chunk_of, num_chunks, EmbeddingStore, LayerMeta, DEFAULT_CHUNK_SIZE};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::partition::{vertex_owners, PartitionAssignment, PartitionId};
use crate::reorder::Permutation;
use crate::sampler::{algorithm_d, keyed_rng};

/// RNG slots, kept apart from the sampler's.
const FEATURE_SLOT: u32 = u32::MAX - 8;
const WEIGHT_SLOT: u32 = u32::MAX - 9;
const NEIGHBOR_SLOT: u32 = u32::MAX - 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

/// `act(h W_self + mean(neighbors) W_nbr + b)`. Matrices are `d_in x d_out`,
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnLayer {
    d_in: usize,
    d_out: usize,
    w_self: Vec<f32>,
    w_nbr: Vec<f32>,
    bias: Vec<f32>,
    activation: Activation,
}

impl GnnLayer {
    pub fn new(
        d_in: usize,
        d_out: usize,
        w_self: Vec<f32>,
        w_nbr: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::InvalidArgument("layer dimensions must be positive".into()));
        }
        if w_self.len() != d_in * d_out || w_nbr.len() != d_in * d_out || bias.len() != d_out {
            return Err(Error::InvalidArgument(format!(
                "layer {d_in}x{d_out}: got w_self {}, w_nbr {}, bias {}",
                w_self.len(),
                w_nbr.len(),
                bias.len()
            )));
        }
        if w_self.iter().chain(&w_nbr).chain(&bias).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("layer parameters must be finite".into()));
        }
        Ok(GnnLayer { d_in, d_out, w_self, w_nbr, bias, activation })
    }

    /// Uniform weights in `±sqrt(6 / (d_in + d_out))`, small uniform bias.
    pub fn random<R: Rng + ?Sized>(d_in: usize, d_out: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt() as f32;
        let mut draw = |n: usize, l: f32| (0..n).map(|_| rng.gen_range(-l..=l)).collect::<Vec<f32>>();
        let w_self = draw(d_in * d_out, limit);
        let w_nbr = draw(d_in * d_out, limit);
        let bias = draw(d_out, 0.1);
        GnnLayer::new(d_in, d_out, w_self, w_nbr, bias, activation)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn w_self(&self) -> &[f32] {
        &self.w_self
    }

    pub fn w_nbr(&self) -> &[f32] {
        &self.w_nbr
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    fn forward_into<'a>(&self, h: &[f32], neighbors: impl ExactSizeIterator<Item = &'a [f32]>, out: &mut [f32]) -> Result<()> {
        if h.len() != self.d_in || out.len() != self.d_out {
            return Err(Error::InvalidArgument(format!(
                "layer expects input {} and output {}, got {} and {}",
                self.d_in,
                self.d_out,
                h.len(),
                out.len()
            )));
        }
        let count = neighbors.len();
        let mut mean = vec![0f64; self.d_in];
        for row in neighbors {
            if row.len() != self.d_in {
                return Err(Error::InvalidArgument(format!(
                    "neighbor row has {} values, expected {}",
                    row.len(),
                    self.d_in
                )));
            }
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x as f64;
            }
        }
        if count > 0 {
            mean.iter_mut().for_each(|m| *m /= count as f64);
        }
        let mut acc: Vec<f64> = self.bias.iter().map(|&b| b as f64).collect();
        for i in 0..self.d_in {
            let (hs, ms) = (h[i] as f64, mean[i]);
            let ws = &self.w_self[i * self.d_out..(i + 1) * self.d_out];
            let wn = &self.w_nbr[i * self.d_out..(i + 1) * self.d_out];
            for j in 0..self.d_out {
                acc[j] += hs * ws[j] as f64 + ms * wn[j] as f64;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = match self.activation {
                Activation::Identity => a as f32,
                Activation::Relu => a.max(0.0) as f32,
            };
        }
        Ok(())
    }
}

/// One layer application. An empty neighbor set contributes a zero mean.
pub fn layer_forward(layer: &GnnLayer, h: &[f32], neighbors: &[&[f32]]) -> Result<Vec<f32>> {
    let mut out = vec![0f32; layer.d_out];
    layer.forward_into(h, neighbors.iter().copied(), &mut out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    layers: Vec<GnnLayer>,
}

impl GnnModel {
    pub fn new(layers: Vec<GnnLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        for (k, w) in layers.windows(2).enumerate() {
            if w[0].d_out != w[1].d_in {
                return Err(Error::InvalidArgument(format!(
                    "layer {k} outputs {} but layer {} takes {}",
                    w[0].d_out,
                    k + 1,
                    w[1].d_in
                )));
            }
        }
        Ok(GnnModel { layers })
    }

    /// `dims[k] -> dims[k+1]` per layer, ReLU on all but the last.
    pub fn seeded(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need an input and at least one output dimension".into()));
        }
        let mut rng = keyed_rng(seed, 0, 0, WEIGHT_SLOT);
        let k = dims.len() - 1;
        let layers = (0..k)
            .map(|i| {
                let act = if i + 1 == k { Activation::Identity } else { Activation::Relu };
                GnnLayer::random(dims[i], dims[i + 1], act, &mut rng)
            })
            .collect::<Result<_>>()?;
        GnnModel::new(layers)
    }

    pub fn layers(&self) -> &[GnnLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out
    }
}

/// Row-major embeddings in graph dense-index order.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Embeddings {
    pub fn row(&self, ix: usize) -> &[f32] {
        &self.data[ix * self.dim..(ix + 1) * self.dim]
    }

    pub fn num_rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    /// Largest `|a - b| / max(1, |b|)` over all entries.
    pub fn max_relative_diff(&self, other: &Embeddings) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs() / (b as f64).abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

/// Input features uniform in [-1, 1], keyed by global id so they do not
/// depend on vertex order.
pub fn input_features(g: &Graph, dim: usize, seed: u64) -> Embeddings {
    let mut data = Vec::with_capacity(g.num_vertices() * dim);
    for &v in g.vertices() {
        let mut rng = keyed_rng(seed, v, 0, FEATURE_SLOT);
        data.extend((0..dim).map(|_| rng.gen_range(-1.0f32..=1.0)));
    }
    Embeddings { dim, data }
}

/// Evaluates every vertex on its own K-hop ball. Returns the final layer and
/// the number of layer applications.
pub fn samplewise_infer(model: &GnnModel, g: &Graph, x: &Embeddings) -> Result<(Embeddings, u64)> {
    check_input(model, g, x)?;
    let k = model.num_layers();
    let n = g.num_vertices();
    let nbrs: Vec<Vec<usize>> = (0..n).map(|ix| g.undirected_neighbors(ix)).collect();
    let d_out = model.output_dim();
    let mut out = vec![0f32; n * d_out];
    let mut invocations = 0u64;

    for v in 0..n {
        // balls[r] = vertices within r hops, r = 0..k-1
        let mut balls: Vec<Vec<usize>> = vec![vec![v]];
        let mut seen: HashMap<usize, usize> = HashMap::from([(v, 0)]);
        for r in 1..k {
            let mut next = balls[r - 1].clone();
            for &u in &balls[r - 1] {
                for &w in &nbrs[u] {
                    seen.entry(w).or_insert_with(|| {
                        next.push(w);
                        r
                    });
                }
            }
            balls.push(next);
        }

        // level 0 embeddings come from the input
        let mut prev: HashMap<usize, Vec<f32>> = HashMap::new();
        for (layer_ix, layer) in model.layers().iter().enumerate() {
            let radius = k - 1 - layer_ix;
            let mut cur: HashMap<usize, Vec<f32>> = HashMap::with_capacity(balls[radius].len());
            for &u in &balls[radius] {
                let mut h = vec![0f32; layer.d_out];
                if layer_ix == 0 {
                    let rows = nbrs[u].iter().map(|&w| x.row(w));
                    layer.forward_into(x.row(u), rows, &mut h)?;
                } else {
                    let rows = nbrs[u].iter().map(|w| prev[w].as_slice());
                    layer.forward_into(&prev[&u], rows, &mut h)?;
                }
                invocations += 1;
                cur.insert(u, h);
            }
            prev = cur;
        }
        out[v * d_out..(v + 1) * d_out].copy_from_slice(&prev[&v]);
    }
    Ok((Embeddings { dim: d_out, data: out }, invocations))
}

fn check_input(model: &GnnModel, g: &Graph, x: &Embeddings) -> Result<()> {
    if x.dim != model.input_dim() || x.data.len() != g.num_vertices() * x.dim {
        return Err(Error::InvalidArgument(format!(
            "features are {} values of dim {}, model wants dim {} for {} vertices",
            x.data.len(),
            x.dim,
            model.input_dim(),
            g.num_vertices()
        )));
    }
    Ok(())
}

/// Who infers which vertex, and where each vertex's row lives.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadPlan {
    pub owners: Vec<PartitionId>,
    pub permutation: Permutation,
    num_partitions: usize,
}

impl WorkloadPlan {
    pub fn new(g: &Graph, a: &PartitionAssignment, permutation: Permutation) -> Result<Self> {
        if permutation.len() != g.num_vertices() {
            return Err(Error::InvalidArgument(format!(
                "permutation covers {} vertices, graph has {}",
                permutation.len(),
                g.num_vertices()
            )));
        }
        Ok(WorkloadPlan {
            owners: vertex_owners(g, a)?,
            permutation,
            num_partitions: a.num_partitions(),
        })
    }

    pub fn num_partitions(&self) -> usize {
        self.num_partitions
    }

    /// Vertices owned by `p`, in row order.
    pub fn owned(&self, p: PartitionId) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.owners.len()).filter(|&ix| self.owners[ix] == p).collect();
        v.sort_unstable_by_key(|&ix| self.permutation.new_id(ix));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub chunk_size: usize,
    pub dynamic_frac: f64,
    /// Sample at most this many neighbors per vertex instead of using the
    /// full neighborhood.
    pub fanout: Option<u32>,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            chunk_size: DEFAULT_CHUNK_SIZE,
            dynamic_frac: 0.10,
            fanout: None,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::InvalidArgument("chunk size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dynamic_frac) {
            return Err(Error::InvalidArgument(format!(
                "dynamic fraction must be in [0, 1], got {}",
                self.dynamic_frac
            )));
        }
        if self.fanout == Some(0) {
            return Err(Error::InvalidArgument("fanout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceOutput {
    pub embeddings: Embeddings,
    pub invocations: u64,
    /// Summed over workers, one entry per layer.
    pub per_layer: Vec<CacheCounters>,
}

impl InferenceOutput {
    pub fn counters(&self) -> CacheCounters {
        let mut total = CacheCounters::default();
        self.per_layer.iter().for_each(|c| total.merge(c));
        total
    }
}

/// Neighbor lists used for aggregation: the full neighborhood, or a uniform
/// sample of at most `fanout` drawn once per vertex.
pub fn aggregation_neighbors(g: &Graph, fanout: Option<u32>, seed: u64) -> Result<Vec<Vec<usize>>> {
    (0..g.num_vertices())
        .map(|ix| {
            let all = g.undirected_neighbors(ix);
            match fanout {
                Some(f) if (f as usize) < all.len() => {
                    let mut rng = keyed_rng(seed, g.vertices()[ix], 0, NEIGHBOR_SLOT);
                    Ok(algorithm_d(all.len(), f as usize, &mut rng)?.into_iter().map(|i| all[i]).collect())
                }
                _ => Ok(all),
            }
        })
        .collect()
}

/// Rows resident in `p`'s static tier: its partition's vertices plus the
/// out-of-partition neighbors of the boundary vertices it owns.
pub fn static_resident_rows(
    memberships: &[Vec<PartitionId>],
    neighbors: &[Vec<usize>],
    plan: &WorkloadPlan,
    p: PartitionId,
) -> Vec<u64> {
    let mut rows: Vec<u64> = (0..memberships.len())
        .filter(|&ix| memberships[ix].contains(&p) || (memberships[ix].is_empty() && plan.owners[ix] == p))
        .map(|ix| plan.permutation.new_id(ix))
        .collect();
    for ix in plan.owned(p) {
        if memberships[ix].len() > 1 {
            rows.extend(
                neighbors[ix]
                    .iter()
                    .filter(|&&u| !memberships[u].contains(&p))
                    .map(|&u| plan.permutation.new_id(u)),
            );
        }
    }
    rows.sort_unstable();
    rows.dedup();
    rows
}

/// Static tier of one worker: resident rows copied out of the backing store.
struct StaticTier {
    dim: usize,
    index: HashMap<u64, usize>,
    data: Vec<f32>,
}

impl StaticTier {
    fn fill(store: &EmbeddingStore, layer: usize, dim: usize, rows: &[u64], counters: &mut CacheCounters) -> Result<Self> {
        let cs = store.chunk_size();
        let mut tier = StaticTier { dim, index: HashMap::with_capacity(rows.len()), data: Vec::with_capacity(rows.len() * dim) };
        let mut i = 0;
        while i < rows.len() {
            let (c, _) = chunk_of(rows[i], cs);
            let chunk = store.read_chunk(layer, c)?;
            counters.fill_chunk_reads += 1;
            while i < rows.len() && chunk_of(rows[i], cs).0 == c {
                let off = chunk_of(rows[i], cs).1;
                tier.index.insert(rows[i], tier.data.len() / dim);
                tier.data.extend_from_slice(&chunk[off * dim..(off + 1) * dim]);
                counters.fill_rows += 1;
                i += 1;
            }
        }
        Ok(tier)
    }

    fn get(&self, row: u64) -> Option<&[f32]> {
        self.index.get(&row).map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }
}

/// Reads rows through the dynamic tier, falling back to the static tier and,
/// only if a row is missing there, to the backing store.
struct Reader<'a, P: ChunkPolicy> {
    tier: &'a StaticTier,
    dynamic: P,
    store: &'a EmbeddingStore,
    layer: usize,
    counters: CacheCounters,
    fallback: HashMap<u64, Vec<f32>>,
}

impl<P: ChunkPolicy> Reader<'_, P> {
    fn touch(&mut self, row: u64) -> Result<()> {
        let cs = self.store.chunk_size();
        let (c, off) = chunk_of(row, cs);
        if self.dynamic.access(c) {
            self.counters.dynamic_hits += 1;
        } else {
            self.counters.dynamic_misses += 1;
            self.counters.chunks_fetched += 1;
            if self.tier.get(row).is_some() {
                self.counters.static_hits += 1;
            }
        }
        if self.tier.get(row).is_none() && !self.fallback.contains_key(&row) {
            self.counters.backing_reads += 1;
            let chunk = self.store.read_chunk(self.layer, c)?;
            let d = self.tier.dim;
            self.fallback.insert(row, chunk[off * d..(off + 1) * d].to_vec());
        }
        Ok(())
    }

    fn row(&self, row: u64) -> &[f32] {
        self.tier.get(row).unwrap_or_else(|| &self.fallback[&row])
    }
}

/// Layerwise inference over `plan`. The backing store is created in
/// `store_dir`; layer 0 holds `x`, layer k the output of model layer k.
pub fn layerwise_infer(
    model: &GnnModel,
    g: &Graph,
    a: &PartitionAssignment,
    plan: &WorkloadPlan,
    x: &Embeddings,
    store_dir: &Path,
    cfg: &InferenceConfig,
) -> Result<InferenceOutput> {
    cfg.validate()?;
    check_input(model, g, x)?;
    if plan.owners.len() != g.num_vertices() || plan.num_partitions() != a.num_partitions() {
        return Err(Error::InvalidArgument("workload plan does not match the graph".into()));
    }
    let n = g.num_vertices();
    let perm = &plan.permutation;
    let mut store = EmbeddingStore::create(store_dir, n, cfg.chunk_size)?;
    store.write_layer(0, x.dim, &to_rows(&x.data, x.dim, perm))?;

    let memberships = a.vertex_partitions(g)?;
    let neighbors = aggregation_neighbors(g, cfg.fanout, cfg.seed)?;
    let capacity = dynamic_capacity(cfg.dynamic_frac, store.num_chunks());
    let parts: Vec<PartitionId> = (0..a.num_partitions() as PartitionId).collect();
    let resident: Vec<Vec<u64>> = parts
        .iter()
        .map(|&p| static_resident_rows(&memberships, &neighbors, plan, p))
        .collect();
    let owned: Vec<Vec<usize>> = parts.iter().map(|&p| plan.owned(p)).collect();

    // every read a worker will make must be resident
    for &p in &parts {
        let res = &resident[p as usize];
        for &ix in &owned[p as usize] {
            for u in std::iter::once(ix).chain(neighbors[ix].iter().copied()) {
                if res.binary_search(&perm.new_id(u)).is_err() {
                    return Err(Error::Cache(format!(
                        "static tier of partition {p} lacks vertex {} needed by {}",
                        g.vertices()[u],
                        g.vertices()[ix]
                    )));
                }
            }
        }
    }

    let mut invocations = 0u64;
    let mut per_layer = Vec::with_capacity(model.num_layers());
    for (li, layer) in model.layers().iter().enumerate() {
        let mut next = vec![0f32; n * layer.d_out];
        let results = std::thread::scope(|scope| {
            let handles: Vec<_> = parts
                .iter()
                .map(|&p| {
                    let (store, resident, owned, neighbors) = (&store, &resident[p as usize], &owned[p as usize], &neighbors);
                    scope.spawn(move || -> Result<(Vec<(u64, Vec<f32>)>, CacheCounters)> {
                        let mut counters = CacheCounters::default();
                        let tier = StaticTier::fill(store, li, layer.d_in, resident, &mut counters)?;
                        let mut reader = Reader {
                            tier: &tier,
                            dynamic: FifoCache::new(capacity),
                            store,
                            layer: li,
                            counters,
                            fallback: HashMap::new(),
                        };
                        let mut out = Vec::with_capacity(owned.len());
                        for &ix in owned {
                            let me = perm.new_id(ix);
                            reader.touch(me)?;
                            for &u in &neighbors[ix] {
                                reader.touch(perm.new_id(u))?;
                            }
                            let mut h = vec![0f32; layer.d_out];
                            let rows = neighbors[ix].iter().map(|&u| reader.row(perm.new_id(u)));
                            layer.forward_into(reader.row(me), rows, &mut h)?;
                            out.push((me, h));
                        }
                        Ok((out, reader.counters))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("inference worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut counters = CacheCounters::default();
        for (rows, c) in results {
            counters.merge(&c);
            for (row, h) in rows {
                invocations += 1;
                let r = row as usize;
                next[r * layer.d_out..(r + 1) * layer.d_out].copy_from_slice(&h);
            }
        }
        store.write_layer(li + 1, layer.d_out, &next)?;
        per_layer.push(counters);
    }

    let d = model.output_dim();
    let last = store.read_layer(model.num_layers())?;
    let mut data = vec![0f32; n * d];
    for ix in 0..n {
        let r = perm.new_id(ix) as usize;
        data[ix * d..(ix + 1) * d].copy_from_slice(&last[r * d..(r + 1) * d]);
    }
    Ok(InferenceOutput { embeddings: Embeddings { dim: d, data }, invocations, per_layer })
}

fn to_rows(data: &[f32], dim: usize, perm: &Permutation) -> Vec<f32> {
    let mut rows = vec![0f32; data.len()];
    for ix in 0..perm.len() {
        let r = perm.new_id(ix) as usize;
        rows[r * dim..(r + 1) * dim].copy_from_slice(&data[ix * dim..(ix + 1) * dim]);
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InteriorReport {
    /// Interior vertices over each partition's vertices.
    pub per_partition: Vec<f64>,
    /// Vertices present in exactly one partition over all non-isolated
    /// vertices.
    pub interior_fraction: f64,
}

pub fn interior_boundary_report(g: &Graph, a: &PartitionAssignment) -> Result<InteriorReport> {
    let per_partition = crate::partition::interior_fractions(g, a)?;
    let memberships = a.vertex_partitions(g)?;
    let placed = memberships.iter().filter(|m| !m.is_empty()).count();
    let interior = memberships.iter().filter(|m| m.len() == 1).count();
    Ok(InteriorReport {
        per_partition,
        interior_fraction: if placed == 0 { 1.0 } else { interior as f64 / placed as f64 },
    })
}
