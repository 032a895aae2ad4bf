//! Seeded preferential-attachment generator.
//!
//! Each new vertex attaches `m` edges to distinct existing vertices chosen
//! with probability proportional to their current degree. Edge orientation is
//! drawn uniformly so hubs carry both heavy in- and out-rows, and vertex ids
//! are a random injection into a sparse `u64` range.

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeType, Graph, VertexId};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawOptions {
    /// Edge types are drawn uniformly from `0..edge_types`.
    pub edge_types: EdgeType,
    /// When set, weights are drawn uniformly from `[0.5, 2.0)`; otherwise 1.0.
    pub random_weights: bool,
}

impl Default for PowerLawOptions {
    fn default() -> Self {
        PowerLawOptions {
            edge_types: 1,
            random_weights: false,
        }
    }
}

pub fn generate_power_law(n: usize, m: usize, seed: u64) -> Result<Graph> {
    generate_power_law_with(n, m, seed, PowerLawOptions::default())
}

pub fn generate_power_law_with(
    n: usize,
    m: usize,
    seed: u64,
    options: PowerLawOptions,
) -> Result<Graph> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if n <= m {
        return Err(Error::InvalidArgument(format!(
            "n must exceed m (got n={n}, m={m})"
        )));
    }
    if options.edge_types == 0 {
        return Err(Error::InvalidArgument("edge_types must be at least 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Every endpoint occurrence, so a uniform draw is degree-proportional.
    let mut pool: Vec<usize> = Vec::with_capacity(2 * m * (n - m));
    let mut dense: Vec<(usize, usize)> = Vec::with_capacity(m * (n - m));
    let mut chosen: Vec<usize> = Vec::with_capacity(m);

    for source in m..n {
        chosen.clear();
        if source == m {
            chosen.extend(0..m);
        } else {
            while chosen.len() < m {
                let t = pool[rng.gen_range(0..pool.len())];
                if !chosen.contains(&t) {
                    chosen.push(t);
                }
            }
        }
        for &t in &chosen {
            dense.push((source, t));
            pool.push(source);
            pool.push(t);
        }
    }

    let id_space = (n as u64).saturating_mul(16).max(n as u64);
    let ids: Vec<VertexId> = index::sample(&mut rng, id_space as usize, n)
        .into_iter()
        .map(|i| i as VertexId)
        .collect();

    let edges = dense
        .into_iter()
        .map(|(a, b)| {
            let (s, d) = if rng.gen::<bool>() { (a, b) } else { (b, a) };
            let etype = if options.edge_types > 1 {
                rng.gen_range(0..options.edge_types)
            } else {
                0
            };
            let weight = if options.random_weights {
                rng.gen_range(0.5..2.0)
            } else {
                1.0
            };
            Edge::typed(ids[s], ids[d], etype, weight)
        })
        .collect();
    Graph::from_edges(edges)
}
