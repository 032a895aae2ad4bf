//! Adaptive distributed neighbor expansion, simulated as synchronous supersteps.
//!
//! Every partition grows from a random seed vertex. Each superstep the
//! partitions exchange their vertex/edge counts, adjust their expansion factor
//! and expand the boundary vertices with the fewest unallocated edges. In
//! `Dne` mode the factor is fixed and a partition stops once it holds more than
//! `tau * |E| / P` edges.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PartitionAssignment, PartitionId, MAX_PARTITIONS};
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const LAMBDA_MIN: f64 = 1e-4;
pub const LAMBDA_MAX: f64 = 1.0;

const UNALLOCATED: PartitionId = PartitionId::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    #[default]
    AdaDne,
    Dne,
}

impl std::str::FromStr for PartitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adadne" => Ok(PartitionMode::AdaDne),
            "dne" => Ok(PartitionMode::Dne),
            other => Err(Error::InvalidArgument(format!("unknown partition mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub num_partitions: usize,
    pub lambda0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mode: PartitionMode,
    /// Edge imbalance factor; only consulted in `Dne` mode.
    pub tau: f64,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            num_partitions: 1,
            lambda0: 0.1,
            alpha: 1.0,
            beta: 1.0,
            mode: PartitionMode::AdaDne,
            tau: 1.1,
            seed: 0,
        }
    }
}

impl PartitionConfig {
    pub fn new(num_partitions: usize) -> Self {
        PartitionConfig {
            num_partitions,
            ..Default::default()
        }
    }

    pub fn dne(num_partitions: usize, tau: f64) -> Self {
        PartitionConfig {
            num_partitions,
            mode: PartitionMode::Dne,
            tau,
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_partitions == 0 || self.num_partitions > MAX_PARTITIONS {
            return Err(Error::InvalidArgument(format!(
                "partition count must be in 1..={MAX_PARTITIONS}, got {}",
                self.num_partitions
            )));
        }
        if !(self.lambda0 > 0.0 && self.lambda0 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda0 must be in (0, 1], got {}",
                self.lambda0
            )));
        }
        if !self.tau.is_finite() || self.tau < 1.0 {
            return Err(Error::InvalidArgument(format!("tau must be >= 1, got {}", self.tau)));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidArgument("alpha and beta must be finite".into()));
        }
        Ok(())
    }
}

/// `lambda * exp(alpha (1 - vs) + beta (1 - es))`, clamped to
/// `[LAMBDA_MIN, LAMBDA_MAX]`.
pub fn update_lambda(lambda: f64, vs: f64, es: f64, alpha: f64, beta: f64) -> Result<f64> {
    if ![lambda, vs, es, alpha, beta].iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument(
            "update_lambda inputs must be finite".into(),
        ));
    }
    if lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "expansion factor must be positive, got {lambda}"
        )));
    }
    let next = lambda * (alpha * (1.0 - vs) + beta * (1.0 - es)).exp();
    Ok(next.clamp(LAMBDA_MIN, LAMBDA_MAX))
}

/// Per-partition `(VS_p, ES_p)`: each count relative to the partition mean.
pub fn compute_scores(vertex_counts: &[usize], edge_counts: &[usize]) -> Result<Vec<(f64, f64)>> {
    if vertex_counts.len() != edge_counts.len() {
        return Err(Error::InvalidArgument(
            "vertex and edge count vectors differ in length".into(),
        ));
    }
    let p = vertex_counts.len() as f64;
    let v_total: usize = vertex_counts.iter().sum();
    let e_total: usize = edge_counts.iter().sum();
    if v_total == 0 {
        return Err(Error::InvalidArgument("all partitions are empty".into()));
    }
    Ok(vertex_counts
        .iter()
        .zip(edge_counts)
        .map(|(&v, &e)| {
            let vs = p * v as f64 / v_total as f64;
            let es = if e_total == 0 {
                1.0
            } else {
                p * e as f64 / e_total as f64
            };
            (vs, es)
        })
        .collect())
}

/// Observable per-partition expansion state, one entry per partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionState {
    pub lambda: Vec<f64>,
    pub vertex_counts: Vec<usize>,
    pub edge_counts: Vec<usize>,
    pub boundary_sizes: Vec<usize>,
    pub supersteps: usize,
}

struct Expansion<'g> {
    g: &'g Graph,
    cfg: &'g PartitionConfig,
    p: usize,
    words: usize,
    endpoints: Vec<(u32, u32)>,
    incident_offsets: Vec<usize>,
    incident: Vec<u32>,
    owner: Vec<PartitionId>,
    residual: Vec<u32>,
    members: Vec<u64>,
    vertex_counts: Vec<usize>,
    edge_counts: Vec<usize>,
    boundary: Vec<BTreeSet<u32>>,
    lambda: Vec<f64>,
    unallocated: usize,
    supersteps: usize,
}

impl<'g> Expansion<'g> {
    fn new(g: &'g Graph, cfg: &'g PartitionConfig) -> Self {
        let n = g.num_vertices();
        let p = cfg.num_partitions;
        let endpoints: Vec<(u32, u32)> = (0..g.num_edges())
            .map(|e| {
                let (s, d) = g.endpoints_at(e);
                (s as u32, d as u32)
            })
            .collect();

        let mut incident_offsets = Vec::with_capacity(n + 1);
        let mut incident = Vec::with_capacity(2 * g.num_edges());
        let mut residual = vec![0u32; n];
        incident_offsets.push(0);
        for ix in 0..n {
            incident.extend(g.out_edge_ids(ix).iter().map(|&e| e as u32));
            // a self-loop already appears in the out list
            incident.extend(
                g.in_edge_ids(ix)
                    .iter()
                    .filter(|&&e| endpoints[e].0 != endpoints[e].1)
                    .map(|&e| e as u32),
            );
            residual[ix] = (incident.len() - incident_offsets[ix]) as u32;
            incident_offsets.push(incident.len());
        }

        let words = p.div_ceil(64);
        Expansion {
            g,
            cfg,
            p,
            words,
            endpoints,
            incident_offsets,
            incident,
            owner: vec![UNALLOCATED; g.num_edges()],
            residual,
            members: vec![0; n * words],
            vertex_counts: vec![0; p],
            edge_counts: vec![0; p],
            boundary: vec![BTreeSet::new(); p],
            lambda: vec![cfg.lambda0; p],
            unallocated: g.num_edges(),
            supersteps: 0,
        }
    }

    fn incident_edges(&self, v: u32) -> &[u32] {
        let v = v as usize;
        &self.incident[self.incident_offsets[v]..self.incident_offsets[v + 1]]
    }

    fn is_member(&self, v: u32, p: usize) -> bool {
        self.members[v as usize * self.words + p / 64] & (1 << (p % 64)) != 0
    }

    fn far_endpoint(&self, e: u32, v: u32) -> u32 {
        let (s, d) = self.endpoints[e as usize];
        if s == v {
            d
        } else {
            s
        }
    }

    fn allocate(&mut self, e: u32, p: usize) {
        debug_assert_eq!(self.owner[e as usize], UNALLOCATED);
        self.owner[e as usize] = p as PartitionId;
        self.edge_counts[p] += 1;
        self.unallocated -= 1;
        let (s, d) = self.endpoints[e as usize];
        for v in if s == d { vec![s] } else { vec![s, d] } {
            self.residual[v as usize] -= 1;
            if !self.is_member(v, p) {
                self.members[v as usize * self.words + p / 64] |= 1 << (p % 64);
                self.vertex_counts[p] += 1;
            }
        }
    }

    /// Uniform draw among vertices that still have unallocated edges.
    fn random_open_vertex(&self, rng: &mut ChaCha8Rng, exclude: &[u32]) -> Option<u32> {
        let n = self.residual.len();
        for _ in 0..64 {
            let v = rng.gen_range(0..n) as u32;
            if self.residual[v as usize] > 0 && !exclude.contains(&v) {
                return Some(v);
            }
        }
        let open: Vec<u32> = (0..n as u32)
            .filter(|&v| self.residual[v as usize] > 0 && !exclude.contains(&v))
            .collect();
        if open.is_empty() {
            None
        } else {
            Some(open[rng.gen_range(0..open.len())])
        }
    }

    /// One-hop allocation of every unallocated edge incident to the selected
    /// vertices. Contested edges go to the claimant with the smaller
    /// synchronized edge count, then the lower id. Returns, per partition, the
    /// vertices that newly joined its boundary.
    fn expand(&mut self, selected: &[Vec<u32>], edge_snapshot: &[usize]) -> Vec<Vec<u32>> {
        let mut claims: Vec<(u32, PartitionId)> = Vec::new();
        for (p, verts) in selected.iter().enumerate() {
            for &v in verts {
                self.boundary[p].remove(&v);
                for &e in self.incident_edges(v) {
                    if self.owner[e as usize] == UNALLOCATED {
                        claims.push((e, p as PartitionId));
                    }
                }
            }
        }
        claims.sort_unstable();
        claims.dedup();

        let mut won: Vec<(u32, usize)> = Vec::with_capacity(claims.len());
        let mut i = 0;
        while i < claims.len() {
            let e = claims[i].0;
            let mut best = claims[i].1 as usize;
            let mut j = i + 1;
            while j < claims.len() && claims[j].0 == e {
                let q = claims[j].1 as usize;
                if edge_snapshot[q] < edge_snapshot[best] {
                    best = q;
                }
                j += 1;
            }
            won.push((e, best));
            i = j;
        }

        let mut joined = vec![Vec::new(); self.p];
        for &(e, p) in &won {
            self.allocate(e, p);
        }
        for &(e, p) in &won {
            let (s, d) = self.endpoints[e as usize];
            for v in [s, d] {
                if self.residual[v as usize] > 0
                    && !selected[p].contains(&v)
                    && self.boundary[p].insert(v)
                {
                    joined[p].push(v);
                }
            }
        }
        joined
    }

    /// Allocates unallocated edges around newly joined boundary vertices whose
    /// endpoints already share a partition, to the smallest such partition.
    fn two_hop(&mut self, joined: &[Vec<u32>]) {
        let mut scratch = Vec::new();
        for verts in joined {
            for &u in verts {
                scratch.clear();
                scratch.extend_from_slice(self.incident_edges(u));
                for &e in &scratch {
                    if self.owner[e as usize] != UNALLOCATED {
                        continue;
                    }
                    let w = self.far_endpoint(e, u);
                    let mut best: Option<usize> = None;
                    for word in 0..self.words {
                        let mut common = self.members[u as usize * self.words + word]
                            & self.members[w as usize * self.words + word];
                        while common != 0 {
                            let q = word * 64 + common.trailing_zeros() as usize;
                            common &= common - 1;
                            if best.map_or(true, |b| self.edge_counts[q] < self.edge_counts[b]) {
                                best = Some(q);
                            }
                        }
                    }
                    if let Some(q) = best {
                        self.allocate(e, q);
                    }
                }
            }
        }
    }

    fn evict_closed_boundary(&mut self) {
        let residual = &self.residual;
        for b in &mut self.boundary {
            b.retain(|&v| residual[v as usize] > 0);
        }
    }

    fn initialize(&mut self, rng: &mut ChaCha8Rng) {
        let mut seeds: Vec<u32> = Vec::with_capacity(self.p);
        let mut selected = vec![Vec::new(); self.p];
        for sel in selected.iter_mut() {
            if let Some(v) = self.random_open_vertex(rng, &seeds) {
                seeds.push(v);
                sel.push(v);
            }
        }
        let snapshot = self.edge_counts.clone();
        self.expand(&selected, &snapshot);
        self.evict_closed_boundary();
    }

    fn superstep(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.supersteps += 1;
        let edge_snapshot = self.edge_counts.clone();
        let active: Vec<bool> = match self.cfg.mode {
            PartitionMode::AdaDne => {
                let scores = compute_scores(&self.vertex_counts, &self.edge_counts)?;
                for (lambda, &(vs, es)) in self.lambda.iter_mut().zip(&scores) {
                    *lambda = update_lambda(*lambda, vs, es, self.cfg.alpha, self.cfg.beta)?;
                }
                vec![true; self.p]
            }
            PartitionMode::Dne => {
                let threshold = self.cfg.tau * self.g.num_edges() as f64 / self.p as f64;
                self.edge_counts
                    .iter()
                    .map(|&e| e as f64 <= threshold)
                    .collect()
            }
        };

        let mut selected: Vec<Vec<u32>> = vec![Vec::new(); self.p];
        let mut reseeded: Vec<u32> = Vec::new();
        for p in 0..self.p {
            if !active[p] {
                continue;
            }
            if self.boundary[p].is_empty() {
                if let Some(v) = self.random_open_vertex(rng, &reseeded) {
                    reseeded.push(v);
                    selected[p].push(v);
                }
                continue;
            }
            let mut candidates: Vec<(u32, u32)> = self.boundary[p]
                .iter()
                .map(|&v| (self.residual[v as usize], v))
                .collect();
            let want = ((self.lambda[p] * candidates.len() as f64).ceil() as usize)
                .max(1)
                .min(candidates.len());
            if want < candidates.len() {
                candidates.select_nth_unstable(want - 1);
                candidates.truncate(want);
            }
            candidates.sort_unstable();
            if self.cfg.mode == PartitionMode::AdaDne {
                // Stop claiming once the residual edges would push the
                // partition past its even share. Two-hop allocation roughly
                // doubles a claim, hence the halved budget. The first vertex
                // always goes.
                let share = self.g.num_edges().div_ceil(self.p);
                let budget = share.saturating_sub(self.edge_counts[p]) / 2;
                let mut claimed = 0usize;
                let keep = candidates
                    .iter()
                    .position(|&(r, _)| {
                        claimed += r as usize;
                        claimed > budget
                    })
                    .unwrap_or(candidates.len())
                    .max(1);
                candidates.truncate(keep);
            }
            selected[p] = candidates.into_iter().map(|(_, v)| v).collect();
        }

        let joined = self.expand(&selected, &edge_snapshot);
        self.two_hop(&joined);
        self.evict_closed_boundary();
        Ok(())
    }

    fn state(&self) -> ExpansionState {
        ExpansionState {
            lambda: self.lambda.clone(),
            vertex_counts: self.vertex_counts.clone(),
            edge_counts: self.edge_counts.clone(),
            boundary_sizes: self.boundary.iter().map(BTreeSet::len).collect(),
            supersteps: self.supersteps,
        }
    }
}

/// Partitions `g` by neighbor expansion. Deterministic for a fixed seed.
pub fn adadne_partition(g: &Graph, cfg: &PartitionConfig) -> Result<PartitionAssignment> {
    adadne_partition_traced(g, cfg).map(|(a, _)| a)
}

/// Like [`adadne_partition`], also returning the final expansion state.
pub fn adadne_partition_traced(
    g: &Graph,
    cfg: &PartitionConfig,
) -> Result<(PartitionAssignment, ExpansionState)> {
    cfg.validate()?;
    if g.num_edges() == 0 {
        return Err(Error::InvalidArgument("graph has no edges to partition".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut run = Expansion::new(g, cfg);
    run.initialize(&mut rng);
    while run.unallocated > 0 {
        run.superstep(&mut rng)?;
    }
    let state = run.state();
    log::debug!(
        "neighbor expansion finished after {} supersteps",
        state.supersteps
    );
    Ok((PartitionAssignment::new(cfg.num_partitions, run.owner)?, state))
}
