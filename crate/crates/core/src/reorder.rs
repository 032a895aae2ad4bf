//! Vertex reordering. Each algorithm sorts vertices by a key and assigns new
//! local ids in sorted order:
//!
//! | alg | key |
//! |-----|-----|
//! | NS  | global id |
//! | DS  | degree |
//! | PS  | (partition, global id) |
//! | PDS | (partition, degree) |
//!
//! Degrees sort descending unless asked otherwise. The sort is stable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Direction, Graph, VertexId};
use crate::partition::{vertex_owners, PartitionAssignment, PartitionId};

const PERM_MAGIC: &[u8; 4] = b"GLPM";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReorderAlgorithm {
    Ns,
    Ds,
    Ps,
    #[default]
    Pds,
}

impl std::str::FromStr for ReorderAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ns" => Ok(ReorderAlgorithm::Ns),
            "ds" => Ok(ReorderAlgorithm::Ds),
            "ps" => Ok(ReorderAlgorithm::Ps),
            "pds" => Ok(ReorderAlgorithm::Pds),
            other => Err(Error::InvalidArgument(format!(
                "unknown reorder algorithm `{other}` (expected ns, ds, ps or pds)"
            ))),
        }
    }
}

impl std::fmt::Display for ReorderAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReorderAlgorithm::Ns => "ns",
            ReorderAlgorithm::Ds => "ds",
            ReorderAlgorithm::Ps => "ps",
            ReorderAlgorithm::Pds => "pds",
        })
    }
}

/// Which degree keys DS and PDS.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeKind {
    #[default]
    Total,
    Out,
    In,
}

impl From<DegreeKind> for Direction {
    fn from(k: DegreeKind) -> Self {
        match k {
            DegreeKind::Total => Direction::Both,
            DegreeKind::Out => Direction::Out,
            DegreeKind::In => Direction::In,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReorderVertex {
    pub global_id: VertexId,
    pub partition: PartitionId,
    pub degree: u64,
}

/// Old index to new local id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    new_ids: Vec<u64>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation { new_ids: (0..n as u64).collect() }
    }

    /// Checks bijectivity.
    pub fn from_new_ids(new_ids: Vec<u64>) -> Result<Self> {
        let n = new_ids.len();
        let mut seen = vec![false; n];
        for (old, &id) in new_ids.iter().enumerate() {
            let slot = seen
                .get_mut(id as usize)
                .ok_or_else(|| Error::Validation(format!("index {old} maps to {id}, outside 0..{n}")))?;
            if *slot {
                return Err(Error::Validation(format!("new id {id} assigned twice")));
            }
            *slot = true;
        }
        Ok(Permutation { new_ids })
    }

    pub fn len(&self) -> usize {
        self.new_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_ids.is_empty()
    }

    pub fn new_id(&self, old: usize) -> u64 {
        self.new_ids[old]
    }

    pub fn new_ids(&self) -> &[u64] {
        &self.new_ids
    }

    /// Old indices listed in new-id order.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0usize; self.new_ids.len()];
        for (old, &new) in self.new_ids.iter().enumerate() {
            order[new as usize] = old;
        }
        order
    }

    /// `GLPM`, u64 count, then the new ids in old order, little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PERM_MAGIC)?;
        w.write_all(&(self.new_ids.len() as u64).to_le_bytes())?;
        for &id in &self.new_ids {
            w.write_all(&id.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PERM_MAGIC {
            return Err(Error::format("magic", format!("expected GLPM, found {magic:?}")));
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let n = u64::from_le_bytes(b) as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * 8 {
            return Err(Error::format(
                "new_ids",
                format!("expected {} bytes for {n} ids, found {}", n * 8, bytes.len()),
            ));
        }
        let ids = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Permutation::from_new_ids(ids)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Sorts `vertices` by the algorithm's key. `degree_ascending` flips the
/// degree component.
pub fn reorder(vertices: &[ReorderVertex], alg: ReorderAlgorithm, degree_ascending: bool) -> Result<Permutation> {
    let mut ids: Vec<VertexId> = vertices.iter().map(|v| v.global_id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("duplicate global id {}", w[0])));
    }

    let deg = |v: &ReorderVertex| if degree_ascending { v.degree } else { u64::MAX - v.degree };
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    match alg {
        ReorderAlgorithm::Ns => order.sort_by_key(|&i| vertices[i].global_id),
        ReorderAlgorithm::Ds => order.sort_by_key(|&i| deg(&vertices[i])),
        ReorderAlgorithm::Ps => order.sort_by_key(|&i| (vertices[i].partition, vertices[i].global_id)),
        ReorderAlgorithm::Pds => order.sort_by_key(|&i| (vertices[i].partition, deg(&vertices[i]))),
    }
    let mut new_ids = vec![0u64; vertices.len()];
    for (new, &old) in order.iter().enumerate() {
        new_ids[old] = new as u64;
    }
    Ok(Permutation { new_ids })
}

/// Reorder inputs for every vertex of `g` in dense-index order. The
/// partition is the owner from [`vertex_owners`]; without an assignment all
/// vertices sit in partition 0.
pub fn reorder_inputs(g: &Graph, a: Option<&PartitionAssignment>, kind: DegreeKind) -> Result<Vec<ReorderVertex>> {
    let owners = match a {
        Some(a) => vertex_owners(g, a)?,
        None => vec![0; g.num_vertices()],
    };
    Ok(g.vertices()
        .iter()
        .enumerate()
        .map(|(ix, &v)| ReorderVertex {
            global_id: v,
            partition: owners[ix],
            degree: g.degree_at(ix, kind.into()) as u64,
        })
        .collect())
}

/// Convenience over [`reorder_inputs`] and [`reorder`].
pub fn reorder_graph(
    g: &Graph,
    a: Option<&PartitionAssignment>,
    alg: ReorderAlgorithm,
    kind: DegreeKind,
    degree_ascending: bool,
) -> Result<Permutation> {
    reorder(&reorder_inputs(g, a, kind)?, alg, degree_ascending)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalityScore {
    /// Mean over vertices of the number of distinct chunks holding the
    /// vertex and its neighbors.
    pub mean_chunk_span: f64,
    /// Mean |new(v) - new(u)| over incident (v, u) pairs.
    pub mean_neighbor_gap: f64,
}

pub fn locality_score(g: &Graph, perm: &Permutation, chunk_size: usize) -> Result<LocalityScore> {
    if perm.len() != g.num_vertices() {
        return Err(Error::InvalidArgument(format!(
            "permutation covers {} vertices, graph has {}",
            perm.len(),
            g.num_vertices()
        )));
    }
    if chunk_size == 0 {
        return Err(Error::InvalidArgument("chunk size must be positive".into()));
    }
    let n = g.num_vertices();
    if n == 0 {
        return Ok(LocalityScore { mean_chunk_span: 0.0, mean_neighbor_gap: 0.0 });
    }
    let mut span_total = 0u64;
    let mut gap_total = 0u128;
    let mut pairs = 0u64;
    let mut chunks = Vec::new();
    for ix in 0..n {
        let me = perm.new_id(ix);
        chunks.clear();
        chunks.push(me / chunk_size as u64);
        for u in g.undirected_neighbors(ix) {
            let other = perm.new_id(u);
            chunks.push(other / chunk_size as u64);
            gap_total += me.abs_diff(other) as u128;
            pairs += 1;
        }
        chunks.sort_unstable();
        chunks.dedup();
        span_total += chunks.len() as u64;
    }
    Ok(LocalityScore {
        mean_chunk_span: span_total as f64 / n as f64,
        mean_neighbor_gap: if pairs == 0 { 0.0 } else { gap_total as f64 / pairs as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn v(global_id: u64, partition: u16, degree: u64) -> ReorderVertex {
        ReorderVertex { global_id, partition, degree }
    }

    fn order_of(p: &Permutation) -> Vec<usize> {
        p.order()
    }

    #[test]
    fn pds_example() {
        let vs = [v(0, 0, 5), v(1, 1, 9), v(2, 0, 2), v(3, 1, 1)];
        let p = reorder(&vs, ReorderAlgorithm::Pds, false).unwrap();
        assert_eq!(order_of(&p), vec![0, 2, 1, 3]);
        let asc = reorder(&vs, ReorderAlgorithm::Pds, true).unwrap();
        assert_eq!(order_of(&asc), vec![2, 0, 3, 1]);
    }

    #[test]
    fn ns_on_sorted_ids_is_identity() {
        let vs: Vec<_> = (0..10).map(|i| v(i * 3, (i % 2) as u16, i)).collect();
        assert_eq!(reorder(&vs, ReorderAlgorithm::Ns, false).unwrap(), Permutation::identity(10));
    }

    #[test]
    fn ds_is_stable_on_ties() {
        let vs: Vec<_> = [7u64, 3, 9, 1].iter().map(|&g| v(g, 0, 4)).collect();
        assert_eq!(reorder(&vs, ReorderAlgorithm::Ds, false).unwrap(), Permutation::identity(4));
    }

    #[test]
    fn ps_sorts_by_partition_then_id() {
        let vs = [v(5, 1, 0), v(2, 0, 0), v(9, 0, 0), v(1, 1, 0)];
        let p = reorder(&vs, ReorderAlgorithm::Ps, false).unwrap();
        assert_eq!(order_of(&p), vec![1, 2, 3, 0]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = reorder(&[v(1, 0, 0), v(1, 1, 0)], ReorderAlgorithm::Ns, false).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn permutation_file_layout() {
        let p = Permutation::from_new_ids(vec![2, 0, 1]).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GLPM");
        assert_eq!(u64::from_le_bytes(buf[4..12].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 12 + 24);
        assert_eq!(Permutation::read_from(&buf[..]).unwrap(), p);
        assert!(Permutation::read_from(&buf[..30]).is_err());
        assert!(Permutation::from_new_ids(vec![0, 0]).is_err());
        assert!(Permutation::from_new_ids(vec![0, 5]).is_err());
    }

    #[test]
    fn span_examples() {
        let clique: Vec<Edge> = (0..4u64)
            .flat_map(|a| (a + 1..4).map(move |b| Edge::new(a, b)))
            .collect();
        let g = Graph::from_edges(clique).unwrap();
        let s = locality_score(&g, &Permutation::identity(4), 4).unwrap();
        assert_eq!(s.mean_chunk_span, 1.0);

        let g = Graph::from_edges(vec![Edge::new(0, 1)]).unwrap();
        let s = locality_score(&g, &Permutation::identity(2), 1).unwrap();
        assert_eq!(s.mean_chunk_span, 2.0);
        assert_eq!(s.mean_neighbor_gap, 1.0);
    }
}
