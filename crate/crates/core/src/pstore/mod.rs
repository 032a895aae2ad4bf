//! Compact read-only store for one vertex-cut partition.
//!
//! Vertices are addressed by their position in the ascending `global_ids`
//! array. Out-edges live in a CSR sorted by `(src, edge type, dst)`, so the
//! edges of one type form a contiguous sub-range that the per-vertex type
//! aggregation locates without a per-edge type array. The in-CSR stores edge
//! ids (positions in the out-CSR) rather than source ids.

mod io;

use std::ops::Range;

use crate::error::{Error, Result};
use crate::graph::{Direction, EdgeType, Graph, VertexId, VertexType};
use crate::partition::{PartitionAssignment, PartitionId};

pub use io::{STORE_MAGIC, STORE_VERSION};

/// Per-vertex type index over a CSR: for vertex `v` the entries
/// `type_ids[indptr[v]..indptr[v + 1]]` are the edge types present in its
/// range, ascending, and `cumulative` holds the running edge count up to and
/// including each type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeIndex {
    pub indptr: Vec<u64>,
    pub type_ids: Vec<EdgeType>,
    pub cumulative: Vec<u64>,
}

impl TypeIndex {
    fn build(indptr: &[u64], type_of: impl Fn(usize) -> EdgeType) -> Self {
        let mut index = TypeIndex {
            indptr: Vec::with_capacity(indptr.len()),
            ..Default::default()
        };
        index.indptr.push(0);
        for row in indptr.windows(2) {
            let (start, end) = (row[0] as usize, row[1] as usize);
            for pos in start..end {
                let t = type_of(pos);
                let count = (pos + 1 - start) as u64;
                let row_start = *index.indptr.last().unwrap() as usize;
                if index.type_ids.len() > row_start && *index.type_ids.last().unwrap() == t {
                    *index.cumulative.last_mut().unwrap() = count;
                } else {
                    index.type_ids.push(t);
                    index.cumulative.push(count);
                }
            }
            index.indptr.push(index.type_ids.len() as u64);
        }
        index
    }

    /// Offsets of type `t` relative to the start of row `v`.
    fn sub_range(&self, v: usize, t: EdgeType) -> Range<usize> {
        let (a, b) = (self.indptr[v] as usize, self.indptr[v + 1] as usize);
        let ids = &self.type_ids[a..b];
        match ids.binary_search(&t) {
            Ok(j) => {
                let start = if j == 0 { 0 } else { self.cumulative[a + j - 1] };
                start as usize..self.cumulative[a + j] as usize
            }
            Err(_) => 0..0,
        }
    }

    /// Type of the edge at `offset` within row `v`.
    fn type_at(&self, v: usize, offset: usize) -> EdgeType {
        let (a, b) = (self.indptr[v] as usize, self.indptr[v + 1] as usize);
        let cum = &self.cumulative[a..b];
        let j = cum.partition_point(|&c| c as usize <= offset);
        self.type_ids[a + j]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionStore {
    partition: PartitionId,
    num_partitions: usize,
    global_ids: Vec<VertexId>,
    vertex_types: Vec<VertexType>,
    out_indptr: Vec<u64>,
    out_dst: Vec<VertexId>,
    out_weights: Vec<f64>,
    out_types: TypeIndex,
    in_indptr: Vec<u64>,
    in_edge_ids: Vec<u64>,
    in_types: TypeIndex,
    out_global_degrees: Vec<u64>,
    in_global_degrees: Vec<u64>,
    /// `set_bytes` bytes per vertex, bit `q % 8` of byte `q / 8` marks partition `q`.
    partition_set: Vec<u8>,
}

/// Out-edges of one vertex, possibly restricted to one type. Edge ids are
/// consecutive starting at `first_edge`.
#[derive(Clone, Copy, Debug)]
pub struct OutNeighbors<'a> {
    pub first_edge: usize,
    pub dst: &'a [VertexId],
    pub weights: &'a [f64],
}

impl<'a> OutNeighbors<'a> {
    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }

    pub fn edge_ids(&self) -> Range<usize> {
        self.first_edge..self.first_edge + self.dst.len()
    }

    /// `(dst, edge_id, weight)` triples.
    pub fn iter(&self) -> impl Iterator<Item = (VertexId, usize, f64)> + 'a {
        let first = self.first_edge;
        self.dst
            .iter()
            .zip(self.weights)
            .enumerate()
            .map(move |(i, (&d, &w))| (d, first + i, w))
    }
}

pub(crate) fn set_bytes(num_partitions: usize) -> usize {
    num_partitions.div_ceil(8)
}

/// Builds the store of partition `p`.
pub fn build_store(g: &Graph, a: &PartitionAssignment, p: PartitionId) -> Result<PartitionStore> {
    let memberships = a.vertex_partitions(g)?;
    build_with_memberships(g, a, p, &memberships)
}

/// Builds the stores of every partition.
pub fn build_stores(g: &Graph, a: &PartitionAssignment) -> Result<Vec<PartitionStore>> {
    let memberships = a.vertex_partitions(g)?;
    (0..a.num_partitions())
        .map(|p| build_with_memberships(g, a, p as PartitionId, &memberships))
        .collect()
}

fn build_with_memberships(
    g: &Graph,
    a: &PartitionAssignment,
    p: PartitionId,
    memberships: &[Vec<PartitionId>],
) -> Result<PartitionStore> {
    if p as usize >= a.num_partitions() {
        return Err(Error::InvalidArgument(format!(
            "partition {p} out of range for {} partitions",
            a.num_partitions()
        )));
    }
    let mut edges: Vec<(usize, usize, usize)> = (0..g.num_edges())
        .filter(|&e| a.partition_of(e) == p)
        .map(|e| {
            let (s, d) = g.endpoints_at(e);
            (e, s, d)
        })
        .collect();
    if edges.is_empty() {
        return Err(Error::EmptyPartition(p as usize));
    }

    // Dense graph index order equals ascending global id order.
    let mut resident: Vec<usize> = edges.iter().flat_map(|&(_, s, d)| [s, d]).collect();
    resident.sort_unstable();
    resident.dedup();
    let mut local_of = vec![u32::MAX; g.num_vertices()];
    for (l, &ix) in resident.iter().enumerate() {
        local_of[ix] = l as u32;
    }
    let n = resident.len();

    let vertices = g.vertices();
    // Sort key (src, type, dst); the original edge index breaks ties between
    // parallel edges so the layout is deterministic.
    edges.sort_unstable_by_key(|&(e, s, d)| (local_of[s], g.edge(e).etype, vertices[d], e));

    let mut out_indptr = vec![0u64; n + 1];
    let mut in_counts = vec![0u64; n + 1];
    for &(_, s, d) in &edges {
        out_indptr[local_of[s] as usize + 1] += 1;
        in_counts[local_of[d] as usize + 1] += 1;
    }
    for i in 0..n {
        out_indptr[i + 1] += out_indptr[i];
        in_counts[i + 1] += in_counts[i];
    }
    let in_indptr = in_counts;

    let out_dst: Vec<VertexId> = edges.iter().map(|&(_, _, d)| vertices[d]).collect();
    let out_weights: Vec<f64> = edges.iter().map(|&(e, _, _)| g.edge(e).weight).collect();
    let out_etype: Vec<EdgeType> = edges.iter().map(|&(e, _, _)| g.edge(e).etype).collect();
    let out_types = TypeIndex::build(&out_indptr, |pos| out_etype[pos]);

    let mut by_dst: Vec<(u32, EdgeType, VertexId, u64)> = edges
        .iter()
        .enumerate()
        .map(|(eid, &(e, s, d))| (local_of[d], g.edge(e).etype, vertices[s], eid as u64))
        .collect();
    by_dst.sort_unstable();
    let in_edge_ids: Vec<u64> = by_dst.iter().map(|t| t.3).collect();
    let in_types = TypeIndex::build(&in_indptr, |pos| by_dst[pos].1);

    let width = set_bytes(a.num_partitions());
    let mut partition_set = vec![0u8; n * width];
    for (l, &ix) in resident.iter().enumerate() {
        for &q in &memberships[ix] {
            partition_set[l * width + q as usize / 8] |= 1 << (q % 8);
        }
    }

    Ok(PartitionStore {
        partition: p,
        num_partitions: a.num_partitions(),
        global_ids: resident.iter().map(|&ix| vertices[ix]).collect(),
        vertex_types: resident.iter().map(|&ix| g.vertex_type_at(ix)).collect(),
        out_indptr,
        out_dst,
        out_weights,
        out_types,
        in_indptr,
        in_edge_ids,
        in_types,
        out_global_degrees: resident
            .iter()
            .map(|&ix| g.degree_at(ix, Direction::Out) as u64)
            .collect(),
        in_global_degrees: resident
            .iter()
            .map(|&ix| g.degree_at(ix, Direction::In) as u64)
            .collect(),
        partition_set,
    })
}

impl PartitionStore {
    pub fn partition_id(&self) -> PartitionId {
        self.partition
    }

    pub fn num_partitions(&self) -> usize {
        self.num_partitions
    }

    pub fn num_vertices(&self) -> usize {
        self.global_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.out_dst.len()
    }

    pub fn global_ids(&self) -> &[VertexId] {
        &self.global_ids
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.global_ids.binary_search(&v).is_ok()
    }

    pub fn local_id(&self, v: VertexId) -> Result<usize> {
        self.global_ids
            .binary_search(&v)
            .map_err(|_| Error::VertexNotFound(v))
    }

    pub fn global_id(&self, local: usize) -> Result<VertexId> {
        self.check_local(local)?;
        Ok(self.global_ids[local])
    }

    pub fn vertex_type(&self, local: usize) -> Result<VertexType> {
        self.check_local(local)?;
        Ok(self.vertex_types[local])
    }

    fn check_local(&self, local: usize) -> Result<()> {
        if local >= self.global_ids.len() {
            return Err(Error::OutOfBounds {
                index: local,
                len: self.global_ids.len(),
            });
        }
        Ok(())
    }

    fn check_edge(&self, edge_id: usize) -> Result<()> {
        if edge_id >= self.out_dst.len() {
            return Err(Error::OutOfBounds {
                index: edge_id,
                len: self.out_dst.len(),
            });
        }
        Ok(())
    }

    fn out_range(&self, local: usize, type_filter: Option<EdgeType>) -> Range<usize> {
        let start = self.out_indptr[local] as usize;
        let end = self.out_indptr[local + 1] as usize;
        match type_filter {
            None => start..end,
            Some(t) => {
                let r = self.out_types.sub_range(local, t);
                start + r.start..start + r.end
            }
        }
    }

    pub fn out_neighbors(&self, local: usize, type_filter: Option<EdgeType>) -> Result<OutNeighbors<'_>> {
        self.check_local(local)?;
        let r = self.out_range(local, type_filter);
        Ok(OutNeighbors {
            first_edge: r.start,
            dst: &self.out_dst[r.clone()],
            weights: &self.out_weights[r],
        })
    }

    /// Ids of the edges entering `local`, grouped by edge type.
    pub fn in_edge_ids(&self, local: usize, type_filter: Option<EdgeType>) -> Result<&[u64]> {
        self.check_local(local)?;
        let start = self.in_indptr[local] as usize;
        let end = self.in_indptr[local + 1] as usize;
        let r = match type_filter {
            None => start..end,
            Some(t) => {
                let r = self.in_types.sub_range(local, t);
                start + r.start..start + r.end
            }
        };
        Ok(&self.in_edge_ids[r])
    }

    /// Local id of the vertex whose out-row holds `edge_id`.
    fn owning_row(&self, edge_id: usize) -> usize {
        self.out_indptr.partition_point(|&x| x as usize <= edge_id) - 1
    }

    pub fn edge_type_of(&self, edge_id: usize) -> Result<EdgeType> {
        self.check_edge(edge_id)?;
        let row = self.owning_row(edge_id);
        Ok(self
            .out_types
            .type_at(row, edge_id - self.out_indptr[row] as usize))
    }

    pub fn in_source_of(&self, edge_id: usize) -> Result<VertexId> {
        self.check_edge(edge_id)?;
        Ok(self.global_ids[self.owning_row(edge_id)])
    }

    pub fn edge_dst(&self, edge_id: usize) -> Result<VertexId> {
        self.check_edge(edge_id)?;
        Ok(self.out_dst[edge_id])
    }

    pub fn edge_weight(&self, edge_id: usize) -> Result<f64> {
        self.check_edge(edge_id)?;
        Ok(self.out_weights[edge_id])
    }

    pub fn local_degree(&self, local: usize, dir: Direction) -> Result<usize> {
        self.check_local(local)?;
        let out = (self.out_indptr[local + 1] - self.out_indptr[local]) as usize;
        let inn = (self.in_indptr[local + 1] - self.in_indptr[local]) as usize;
        Ok(match dir {
            Direction::Out => out,
            Direction::In => inn,
            Direction::Both => out + inn,
        })
    }

    /// Local degree counting only edges of type `t`.
    pub fn local_typed_degree(&self, local: usize, dir: Direction, t: EdgeType) -> Result<usize> {
        self.check_local(local)?;
        let out = self.out_types.sub_range(local, t).len();
        let inn = self.in_types.sub_range(local, t).len();
        Ok(match dir {
            Direction::Out => out,
            Direction::In => inn,
            Direction::Both => out + inn,
        })
    }

    /// Degree in the original, unpartitioned graph.
    pub fn global_degree(&self, local: usize, dir: Direction) -> Result<usize> {
        self.check_local(local)?;
        let out = self.out_global_degrees[local] as usize;
        let inn = self.in_global_degrees[local] as usize;
        Ok(match dir {
            Direction::Out => out,
            Direction::In => inn,
            Direction::Both => out + inn,
        })
    }

    pub fn partitions_of(&self, local: usize) -> Result<Vec<PartitionId>> {
        self.check_local(local)?;
        let width = set_bytes(self.num_partitions);
        let bytes = &self.partition_set[local * width..(local + 1) * width];
        Ok((0..self.num_partitions)
            .filter(|&q| bytes[q / 8] & (1 << (q % 8)) != 0)
            .map(|q| q as PartitionId)
            .collect())
    }

    /// True when the vertex resides in this partition only.
    pub fn is_interior(&self, local: usize) -> Result<bool> {
        Ok(self.partitions_of(local)?.len() == 1)
    }
}
