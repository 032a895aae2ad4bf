//! Vertex-cut partitioning: every edge belongs to exactly one partition and
//! vertices incident to edges in several partitions are replicated.

mod adadne;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub use adadne::{
    adadne_partition, adadne_partition_traced, compute_scores, update_lambda, ExpansionState, PartitionConfig,
    PartitionMode, LAMBDA_MAX, LAMBDA_MIN,
};

use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId};
use crate::util::splitmix64;

pub type PartitionId = u16;

/// Largest supported partition count; partition ids are stored as `u16`.
pub const MAX_PARTITIONS: usize = u16::MAX as usize;

const ASSIGNMENT_MAGIC: &[u8; 4] = b"GLPA";
const ASSIGNMENT_VERSION: u16 = 1;

/// Total map from edge index to partition id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionAssignment {
    num_partitions: usize,
    edge_to_partition: Vec<PartitionId>,
}

impl PartitionAssignment {
    pub fn new(num_partitions: usize, edge_to_partition: Vec<PartitionId>) -> Result<Self> {
        if num_partitions == 0 || num_partitions > MAX_PARTITIONS {
            return Err(Error::InvalidArgument(format!(
                "partition count must be in 1..={MAX_PARTITIONS}, got {num_partitions}"
            )));
        }
        if let Some((e, &p)) = edge_to_partition
            .iter()
            .enumerate()
            .find(|(_, &p)| p as usize >= num_partitions)
        {
            return Err(Error::Validation(format!(
                "edge {e} assigned to partition {p} but only {num_partitions} exist"
            )));
        }
        Ok(PartitionAssignment {
            num_partitions,
            edge_to_partition,
        })
    }

    pub fn num_partitions(&self) -> usize {
        self.num_partitions
    }

    pub fn num_edges(&self) -> usize {
        self.edge_to_partition.len()
    }

    pub fn partition_of(&self, edge: usize) -> PartitionId {
        self.edge_to_partition[edge]
    }

    pub fn as_slice(&self) -> &[PartitionId] {
        &self.edge_to_partition
    }

    pub fn edge_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_partitions];
        for &p in &self.edge_to_partition {
            counts[p as usize] += 1;
        }
        counts
    }

    fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.num_edges() != self.edge_to_partition.len() {
            return Err(Error::Validation(format!(
                "assignment covers {} edges but graph has {}",
                self.edge_to_partition.len(),
                g.num_edges()
            )));
        }
        Ok(())
    }

    /// For each dense vertex index, the sorted partitions it resides in.
    /// Isolated vertices get an empty list.
    pub fn vertex_partitions(&self, g: &Graph) -> Result<Vec<Vec<PartitionId>>> {
        self.check_graph(g)?;
        let mut sets: Vec<Vec<PartitionId>> = vec![Vec::new(); g.num_vertices()];
        for (e, &p) in self.edge_to_partition.iter().enumerate() {
            let (s, d) = g.endpoints_at(e);
            sets[s].push(p);
            sets[d].push(p);
        }
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        Ok(sets)
    }

    /// `V_p` for every partition, each sorted ascending.
    pub fn vertex_sets(&self, g: &Graph) -> Result<Vec<Vec<VertexId>>> {
        let memberships = self.vertex_partitions(g)?;
        let mut sets = vec![Vec::new(); self.num_partitions];
        for (ix, parts) in memberships.iter().enumerate() {
            for &p in parts {
                sets[p as usize].push(g.vertices()[ix]);
            }
        }
        Ok(sets)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(ASSIGNMENT_MAGIC)?;
        w.write_all(&ASSIGNMENT_VERSION.to_le_bytes())?;
        w.write_all(&(self.num_partitions as u16).to_le_bytes())?;
        w.write_all(&(self.edge_to_partition.len() as u64).to_le_bytes())?;
        for &p in &self.edge_to_partition {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|e| Error::format("assignment header", e.to_string()))?;
        if &header[0..4] != ASSIGNMENT_MAGIC {
            return Err(Error::format("assignment header", "bad magic"));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != ASSIGNMENT_VERSION {
            return Err(Error::format(
                "assignment header",
                format!("unsupported version {version}"),
            ));
        }
        let p = u16::from_le_bytes([header[6], header[7]]) as usize;
        let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != count * 2 {
            return Err(Error::format(
                "assignment body",
                format!("expected {} bytes, found {}", count * 2, body.len()),
            ));
        }
        let parts = body
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        PartitionAssignment::new(p, parts)
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

/// Replication factor, vertex balance and edge balance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionQuality {
    pub rf: f64,
    pub vb: f64,
    pub eb: f64,
}

/// Per-partition counts backing a [`PartitionQuality`].
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionStats {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
    /// Non-isolated vertex count, the denominator of RF.
    pub covered_vertices: usize,
    pub isolated_vertices: usize,
    pub quality: PartitionQuality,
}

/// Exact RF/VB/EB. Isolated vertices are excluded from the RF denominator.
pub fn compute_metrics(g: &Graph, a: &PartitionAssignment) -> Result<PartitionQuality> {
    partition_stats(g, a).map(|s| s.quality)
}

pub fn partition_stats(g: &Graph, a: &PartitionAssignment) -> Result<PartitionStats> {
    let sets = a.vertex_sets(g)?;
    let vertices: Vec<usize> = sets.iter().map(Vec::len).collect();
    let edges = a.edge_counts();
    if let Some(p) = vertices.iter().position(|&v| v == 0) {
        return Err(Error::DegeneratePartition { partition: p });
    }
    let isolated = g.isolated_count();
    let covered = g.num_vertices() - isolated;
    let ratio = |xs: &[usize]| {
        let max = *xs.iter().max().unwrap() as f64;
        let min = *xs.iter().min().unwrap() as f64;
        max / min
    };
    let quality = PartitionQuality {
        rf: vertices.iter().sum::<usize>() as f64 / covered as f64,
        vb: ratio(&vertices),
        eb: ratio(&edges),
    };
    Ok(PartitionStats {
        vertices,
        edges,
        covered_vertices: covered,
        isolated_vertices: isolated,
        quality,
    })
}

impl PartitionStats {
    /// `partition,vertices,edges` rows followed by a summary row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "partition,vertices,edges")?;
        for (p, (v, e)) in self.vertices.iter().zip(&self.edges).enumerate() {
            writeln!(w, "{p},{v},{e}")?;
        }
        writeln!(
            w,
            "summary,rf={:.6},vb={:.6},eb={:.6}",
            self.quality.rf, self.quality.vb, self.quality.eb
        )?;
        Ok(())
    }
}

/// 1D hash partitioning: every edge goes to the partition of its source.
pub fn hash_partition_1d(g: &Graph, num_partitions: usize, seed: u64) -> Result<PartitionAssignment> {
    if num_partitions == 0 || num_partitions > MAX_PARTITIONS {
        return Err(Error::InvalidArgument(format!(
            "partition count must be in 1..={MAX_PARTITIONS}, got {num_partitions}"
        )));
    }
    let salt = splitmix64(seed);
    let parts = g
        .edges()
        .iter()
        .map(|e| (splitmix64(e.src ^ salt) % num_partitions as u64) as PartitionId)
        .collect();
    PartitionAssignment::new(num_partitions, parts)
}

/// Fraction of interior vertices (present in exactly one partition) among
/// each partition's vertices.
pub fn interior_fractions(g: &Graph, a: &PartitionAssignment) -> Result<Vec<f64>> {
    let memberships = a.vertex_partitions(g)?;
    let mut interior = vec![0usize; a.num_partitions()];
    let mut total = vec![0usize; a.num_partitions()];
    for parts in &memberships {
        for &p in parts {
            total[p as usize] += 1;
            if parts.len() == 1 {
                interior[p as usize] += 1;
            }
        }
    }
    Ok(interior
        .iter()
        .zip(&total)
        .map(|(&i, &t)| if t == 0 { 0.0 } else { i as f64 / t as f64 })
        .collect())
}

/// The partition responsible for each vertex: the one holding most of its
/// incident edges, ties to the lower id. Isolated vertices go to partition 0.
pub fn vertex_owners(g: &Graph, a: &PartitionAssignment) -> Result<Vec<PartitionId>> {
    a.check_graph(g)?;
    let p = a.num_partitions();
    let mut owners = Vec::with_capacity(g.num_vertices());
    let mut counts = vec![0usize; p];
    for ix in 0..g.num_vertices() {
        counts.iter_mut().for_each(|c| *c = 0);
        for &e in g.out_edge_ids(ix).iter().chain(g.in_edge_ids(ix)) {
            counts[a.partition_of(e) as usize] += 1;
        }
        let mut best = 0;
        for q in 1..p {
            if counts[q] > counts[best] {
                best = q;
            }
        }
        owners.push(best as PartitionId);
    }
    Ok(owners)
}
