//! In-memory directed heterogeneous multigraph.
//!
//! Vertex ids are arbitrary `u64` values. Internally every vertex also has a
//! dense index (its position in the ascending id list) which the partitioner
//! and the reorder code use for array-backed state.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VertexId = u64;
pub type EdgeType = u16;
pub type VertexType = u16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: VertexId,
    pub dst: VertexId,
    pub etype: EdgeType,
    pub weight: f64,
}

impl Edge {
    pub fn new(src: VertexId, dst: VertexId) -> Self {
        Edge {
            src,
            dst,
            etype: 0,
            weight: 1.0,
        }
    }

    pub fn typed(src: VertexId, dst: VertexId, etype: EdgeType, weight: f64) -> Self {
        Edge {
            src,
            dst,
            etype,
            weight,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    #[default]
    Out,
    Both,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "in" => Ok(Direction::In),
            "out" => Ok(Direction::Out),
            "both" => Ok(Direction::Both),
            other => Err(Error::InvalidArgument(format!("unknown direction `{other}`"))),
        }
    }
}

/// Immutable multigraph. Parallel edges and self-loops are kept.
#[derive(Clone, Debug)]
pub struct Graph {
    vertices: Vec<VertexId>,
    vertex_types: Vec<VertexType>,
    edges: Vec<Edge>,
    out_offsets: Vec<usize>,
    out_edges: Vec<usize>,
    in_offsets: Vec<usize>,
    in_edges: Vec<usize>,
}

impl Graph {
    /// Builds a graph whose vertex set is exactly the set of edge endpoints.
    pub fn from_edges(edges: Vec<Edge>) -> Result<Self> {
        let ids: Vec<VertexId> = edges.iter().flat_map(|e| [e.src, e.dst]).collect();
        Self::new(ids, edges)
    }

    /// Builds a graph over `vertices` (duplicates collapse) and `edges`.
    /// Every edge endpoint must be declared.
    pub fn new(vertices: impl IntoIterator<Item = VertexId>, edges: Vec<Edge>) -> Result<Self> {
        let mut vertices: Vec<VertexId> = vertices.into_iter().collect();
        vertices.sort_unstable();
        vertices.dedup();

        let n = vertices.len();
        let mut out_deg = vec![0usize; n];
        let mut in_deg = vec![0usize; n];
        let mut endpoints = Vec::with_capacity(edges.len());
        for (i, e) in edges.iter().enumerate() {
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::Validation(format!(
                    "edge {i} ({} -> {}) has invalid weight {}",
                    e.src, e.dst, e.weight
                )));
            }
            let s = vertices
                .binary_search(&e.src)
                .map_err(|_| Error::Validation(format!("edge {i}: undeclared source {}", e.src)))?;
            let d = vertices
                .binary_search(&e.dst)
                .map_err(|_| Error::Validation(format!("edge {i}: undeclared target {}", e.dst)))?;
            out_deg[s] += 1;
            in_deg[d] += 1;
            endpoints.push((s, d));
        }

        let out_offsets = prefix_sum(&out_deg);
        let in_offsets = prefix_sum(&in_deg);
        let mut out_edges = vec![0usize; edges.len()];
        let mut in_edges = vec![0usize; edges.len()];
        let mut out_fill = out_offsets[..n].to_vec();
        let mut in_fill = in_offsets[..n].to_vec();
        for (i, &(s, d)) in endpoints.iter().enumerate() {
            out_edges[out_fill[s]] = i;
            out_fill[s] += 1;
            in_edges[in_fill[d]] = i;
            in_fill[d] += 1;
        }

        Ok(Graph {
            vertex_types: vec![0; n],
            vertices,
            edges,
            out_offsets,
            out_edges,
            in_offsets,
            in_edges,
        })
    }

    pub fn with_vertex_types(
        mut self,
        types: impl IntoIterator<Item = (VertexId, VertexType)>,
    ) -> Result<Self> {
        for (v, t) in types {
            let ix = self.index_of(v).ok_or(Error::VertexNotFound(v))?;
            self.vertex_types[ix] = t;
        }
        Ok(self)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Vertex ids in ascending order; position is the dense index.
    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> &Edge {
        &self.edges[i]
    }

    pub fn index_of(&self, v: VertexId) -> Option<usize> {
        self.vertices.binary_search(&v).ok()
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.index_of(v).is_some()
    }

    pub fn vertex_type(&self, v: VertexId) -> Result<VertexType> {
        let ix = self.index_of(v).ok_or(Error::VertexNotFound(v))?;
        Ok(self.vertex_types[ix])
    }

    pub fn vertex_type_at(&self, ix: usize) -> VertexType {
        self.vertex_types[ix]
    }

    /// Edge indices leaving the vertex at dense index `ix`.
    pub fn out_edge_ids(&self, ix: usize) -> &[usize] {
        &self.out_edges[self.out_offsets[ix]..self.out_offsets[ix + 1]]
    }

    /// Edge indices entering the vertex at dense index `ix`.
    pub fn in_edge_ids(&self, ix: usize) -> &[usize] {
        &self.in_edges[self.in_offsets[ix]..self.in_offsets[ix + 1]]
    }

    pub fn degree_at(&self, ix: usize, dir: Direction) -> usize {
        let out = self.out_offsets[ix + 1] - self.out_offsets[ix];
        let inn = self.in_offsets[ix + 1] - self.in_offsets[ix];
        match dir {
            Direction::Out => out,
            Direction::In => inn,
            Direction::Both => out + inn,
        }
    }

    /// Number of incident arcs in `dir`, counting parallel edges. A self-loop
    /// counts once toward in-degree and once toward out-degree.
    pub fn degree(&self, v: VertexId, dir: Direction) -> Result<usize> {
        let ix = self.index_of(v).ok_or(Error::VertexNotFound(v))?;
        Ok(self.degree_at(ix, dir))
    }

    /// Dense indices of the endpoints of edge `i`.
    pub fn endpoints_at(&self, i: usize) -> (usize, usize) {
        let e = &self.edges[i];
        (
            self.index_of(e.src).expect("validated endpoint"),
            self.index_of(e.dst).expect("validated endpoint"),
        )
    }

    /// Dense indices of the other endpoint of every edge touching `ix`: out
    /// targets first, then in sources, each in edge order. Parallel edges
    /// repeat; a self-loop appears once.
    pub fn undirected_neighbors(&self, ix: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.degree_at(ix, Direction::Both));
        for &e in self.out_edge_ids(ix) {
            out.push(self.endpoints_at(e).1);
        }
        for &e in self.in_edge_ids(ix) {
            let (s, d) = self.endpoints_at(e);
            if s != d {
                out.push(s);
            }
        }
        out
    }

    /// Vertices with no incident edge.
    pub fn isolated_count(&self) -> usize {
        (0..self.num_vertices())
            .filter(|&ix| self.degree_at(ix, Direction::Both) == 0)
            .count()
    }

    /// Writes the graph as a TSV edge list (`src dst etype weight`).
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.edges {
            writeln!(w, "{}\t{}\t{}\t{}", e.src, e.dst, e.etype, e.weight)?;
        }
        Ok(())
    }

    pub fn save_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_edge_list(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn prefix_sum(counts: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(counts.len() + 1);
    let mut acc = 0;
    out.push(0);
    for c in counts {
        acc += c;
        out.push(acc);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    pub has_types: bool,
    pub has_weights: bool,
    pub undirected: bool,
}

impl LoadOptions {
    /// Options matching the layout written by [`Graph::write_edge_list`].
    pub fn typed_weighted() -> Self {
        LoadOptions {
            has_types: true,
            has_weights: true,
            undirected: false,
        }
    }
}

pub fn load_edge_list(path: impl AsRef<Path>, options: LoadOptions) -> Result<Graph> {
    let file = File::open(path.as_ref())?;
    parse_edge_list(BufReader::new(file), options)
}

/// Parses `src dst [etype] [weight]` lines separated by tabs or spaces.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_edge_list<R: BufRead>(reader: R, options: LoadOptions) -> Result<Graph> {
    let expected = 2 + usize::from(options.has_types) + usize::from(options.has_weights);
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != expected {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str, raw: &str| Error::Parse {
            line: lineno,
            message: format!("invalid {what} `{raw}`"),
        };
        let src: VertexId = fields[0].parse().map_err(|_| parse_err("source id", fields[0]))?;
        let dst: VertexId = fields[1].parse().map_err(|_| parse_err("target id", fields[1]))?;
        let mut next = 2;
        let etype = if options.has_types {
            next += 1;
            fields[2].parse().map_err(|_| parse_err("edge type", fields[2]))?
        } else {
            0
        };
        let weight: f64 = if options.has_weights {
            fields[next]
                .parse()
                .map_err(|_| parse_err("weight", fields[next]))?
        } else {
            1.0
        };
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::Validation(format!(
                "line {lineno}: weight must be finite and non-negative, got {weight}"
            )));
        }
        edges.push(Edge::typed(src, dst, etype, weight));
        if options.undirected {
            edges.push(Edge::typed(dst, src, etype, weight));
        }
    }
    Graph::from_edges(edges)
}

/// Log2-bucketed degree histogram. Bucket 0 holds degree 0; bucket `b >= 1`
/// holds degrees in `[2^(b-1), 2^b)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeHistogram {
    pub direction: Direction,
    pub bucket_lower: Vec<usize>,
    pub counts: Vec<usize>,
}

impl DegreeHistogram {
    pub fn compute(g: &Graph, direction: Direction) -> Self {
        let mut counts: Vec<usize> = Vec::new();
        for ix in 0..g.num_vertices() {
            let d = g.degree_at(ix, direction);
            let b = if d == 0 {
                0
            } else {
                (usize::BITS - d.leading_zeros()) as usize
            };
            if counts.len() <= b {
                counts.resize(b + 1, 0);
            }
            counts[b] += 1;
        }
        let bucket_lower = (0..counts.len())
            .map(|b| if b == 0 { 0 } else { 1 << (b - 1) })
            .collect();
        DegreeHistogram {
            direction,
            bucket_lower,
            counts,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Discrete power-law exponent estimate (continuous approximation of the MLE)
/// over degrees `>= d_min`.
pub fn power_law_exponent(degrees: &[usize], d_min: usize) -> Option<f64> {
    let floor = d_min as f64 - 0.5;
    if floor <= 0.0 {
        return None;
    }
    let (n, s) = degrees
        .iter()
        .filter(|&&d| d >= d_min)
        .fold((0usize, 0.0f64), |(n, s), &d| (n + 1, s + (d as f64 / floor).ln()));
    if n == 0 || s <= 0.0 {
        return None;
    }
    Some(1.0 + n as f64 / s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, options: LoadOptions) -> Result<Graph> {
        parse_edge_list(text.as_bytes(), options)
    }

    #[test]
    fn three_line_file() {
        let g = parse("0 1\n1 2\n2 0\n", LoadOptions::default()).unwrap();
        assert_eq!(g.num_vertices(), 3);
        assert_eq!(g.num_edges(), 3);
    }

    #[test]
    fn empty_file() {
        let g = parse("", LoadOptions::default()).unwrap();
        assert_eq!(g.num_vertices(), 0);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn typed_weighted_line() {
        let g = parse("0 1 0 2.5", LoadOptions::typed_weighted()).unwrap();
        assert_eq!(g.edge(0), &Edge::typed(0, 1, 0, 2.5));
    }

    #[test]
    fn comments_and_tabs() {
        let g = parse("# header\n7\t9\n\n9\t7\n", LoadOptions::default()).unwrap();
        assert_eq!(g.vertices(), &[7, 9]);
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn undirected_expands_to_two_arcs() {
        let opts = LoadOptions {
            has_types: true,
            has_weights: true,
            undirected: true,
        };
        let g = parse("4 5 3 0.5\n", opts).unwrap();
        assert_eq!(g.edges(), &[Edge::typed(4, 5, 3, 0.5), Edge::typed(5, 4, 3, 0.5)]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("0 1\n1 x\n", LoadOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse("0 1 2\n", LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn negative_weight_rejected() {
        let opts = LoadOptions {
            has_weights: true,
            ..Default::default()
        };
        let err = parse("0 1 -1.0\n", opts).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn undeclared_endpoint_rejected() {
        let err = Graph::new([1, 2], vec![Edge::new(1, 3)]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn degrees() {
        let star: Vec<Edge> = (1..=5).map(|i| Edge::new(0, i)).collect();
        let g = Graph::new([0, 1, 2, 3, 4, 5, 99], star).unwrap();
        assert_eq!(g.degree(0, Direction::Out).unwrap(), 5);
        assert_eq!(g.degree(99, Direction::Both).unwrap(), 0);
        assert!(matches!(
            g.degree(42, Direction::Out),
            Err(Error::VertexNotFound(42))
        ));

        let g = Graph::from_edges(vec![Edge::new(1, 2), Edge::new(1, 2), Edge::new(3, 3)]).unwrap();
        assert_eq!(g.degree(1, Direction::Out).unwrap(), 2);
        assert_eq!(g.degree(3, Direction::Out).unwrap(), 1);
        assert_eq!(g.degree(3, Direction::In).unwrap(), 1);
        assert_eq!(g.isolated_count(), 0);
    }

    #[test]
    fn histogram_sums_to_vertex_count() {
        let g = Graph::new(
            [0, 1, 2, 3, 10],
            vec![Edge::new(0, 1), Edge::new(0, 2), Edge::new(0, 3), Edge::new(1, 2)],
        )
        .unwrap();
        let h = DegreeHistogram::compute(&g, Direction::Out);
        assert_eq!(h.total(), 5);
        assert_eq!(h.counts, vec![3, 1, 1]);
        assert_eq!(h.bucket_lower, vec![0, 1, 2]);
    }
}
