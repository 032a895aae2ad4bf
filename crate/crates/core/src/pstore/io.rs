//! On-disk layout: a `meta` JSON file plus three little-endian blobs
//! (`vertices.bin`, `out.bin`, `in.bin`). `meta` lists every field with its
//! dtype, element count, blob and byte offset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{set_bytes, PartitionStore, TypeIndex};
use crate::error::{Error, Result};
use crate::partition::MAX_PARTITIONS;

pub const STORE_MAGIC: &str = "GLPS";
pub const STORE_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    magic: String,
    version: u16,
    partition: u16,
    num_partitions: u64,
    num_vertices: u64,
    num_edges: u64,
    fields: BTreeMap<String, FieldMeta>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct FieldMeta {
    dtype: String,
    length: u64,
    file: String,
    byte_offset: u64,
}

trait Scalar: Sized + Copy {
    const DTYPE: &'static str;
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
}

macro_rules! scalar {
    ($t:ty, $name:literal) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $name;
            const SIZE: usize = std::mem::size_of::<$t>();
            fn put(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn get(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().unwrap())
            }
        }
    };
}

scalar!(u8, "u8");
scalar!(u16, "u16");
scalar!(u64, "u64");
scalar!(f64, "f64");

struct BlobWriter<'m> {
    file: &'static str,
    bytes: Vec<u8>,
    fields: &'m mut BTreeMap<String, FieldMeta>,
}

impl BlobWriter<'_> {
    fn field<T: Scalar>(&mut self, name: &str, values: &[T]) {
        self.fields.insert(
            name.to_string(),
            FieldMeta {
                dtype: T::DTYPE.to_string(),
                length: values.len() as u64,
                file: self.file.to_string(),
                byte_offset: self.bytes.len() as u64,
            },
        );
        for &v in values {
            v.put(&mut self.bytes);
        }
    }
}

struct BlobReader<'a> {
    meta: &'a Meta,
    blobs: BTreeMap<String, Vec<u8>>,
}

impl BlobReader<'_> {
    fn field<T: Scalar>(&self, name: &str) -> Result<Vec<T>> {
        let fm = self
            .meta
            .fields
            .get(name)
            .ok_or_else(|| Error::format(name, "missing from meta"))?;
        if fm.dtype != T::DTYPE {
            return Err(Error::format(
                name,
                format!("dtype {} in meta, expected {}", fm.dtype, T::DTYPE),
            ));
        }
        let blob = self
            .blobs
            .get(&fm.file)
            .ok_or_else(|| Error::format(name, format!("unknown blob `{}`", fm.file)))?;
        let start = fm.byte_offset as usize;
        let end = (fm.length as usize)
            .checked_mul(T::SIZE)
            .and_then(|n| n.checked_add(start))
            .ok_or_else(|| Error::format(name, "length overflows"))?;
        if end > blob.len() {
            return Err(Error::format(
                name,
                format!("needs bytes {start}..{end} but `{}` has {}", fm.file, blob.len()),
            ));
        }
        Ok(blob[start..end].chunks_exact(T::SIZE).map(T::get).collect())
    }
}

const BLOBS: [&str; 3] = ["vertices.bin", "out.bin", "in.bin"];

impl PartitionStore {
    /// Writes the store into `dir`, creating it if needed. The output is a
    /// pure function of the store contents.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut fields = BTreeMap::new();

        let mut w = BlobWriter { file: BLOBS[0], bytes: Vec::new(), fields: &mut fields };
        w.field("global_ids", &self.global_ids);
        w.field("vertex_types", &self.vertex_types);
        w.field("out_global_degrees", &self.out_global_degrees);
        w.field("in_global_degrees", &self.in_global_degrees);
        w.field("partition_set", &self.partition_set);
        let vertices = w.bytes;

        let mut w = BlobWriter { file: BLOBS[1], bytes: Vec::new(), fields: &mut fields };
        w.field("out_indptr", &self.out_indptr);
        w.field("out_dst", &self.out_dst);
        w.field("out_weights", &self.out_weights);
        w.field("out_type_indptr", &self.out_types.indptr);
        w.field("out_type_ids", &self.out_types.type_ids);
        w.field("out_type_counts", &self.out_types.cumulative);
        let out = w.bytes;

        let mut w = BlobWriter { file: BLOBS[2], bytes: Vec::new(), fields: &mut fields };
        w.field("in_indptr", &self.in_indptr);
        w.field("in_edge_ids", &self.in_edge_ids);
        w.field("in_type_indptr", &self.in_types.indptr);
        w.field("in_type_ids", &self.in_types.type_ids);
        w.field("in_type_counts", &self.in_types.cumulative);
        let inn = w.bytes;

        let meta = Meta {
            magic: STORE_MAGIC.to_string(),
            version: STORE_VERSION,
            partition: self.partition,
            num_partitions: self.num_partitions as u64,
            num_vertices: self.global_ids.len() as u64,
            num_edges: self.out_dst.len() as u64,
            fields,
        };
        let mut text = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::format("meta", e.to_string()))?;
        text.push('\n');

        fs::write(dir.join(BLOBS[0]), vertices)?;
        fs::write(dir.join(BLOBS[1]), out)?;
        fs::write(dir.join(BLOBS[2]), inn)?;
        fs::write(dir.join("meta"), text)?;
        Ok(())
    }

    /// Loads and validates a store written by [`PartitionStore::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("meta"))
            .map_err(|e| Error::format("meta", format!("{}: {e}", dir.join("meta").display())))?;
        let meta: Meta =
            serde_json::from_str(&text).map_err(|e| Error::format("meta", e.to_string()))?;
        if meta.magic != STORE_MAGIC {
            return Err(Error::format("meta", format!("bad magic `{}`", meta.magic)));
        }
        if meta.version != STORE_VERSION {
            return Err(Error::format("meta", format!("unsupported version {}", meta.version)));
        }
        if meta.num_partitions == 0 || meta.num_partitions > MAX_PARTITIONS as u64 {
            return Err(Error::format("meta", "num_partitions out of range"));
        }

        let mut blobs = BTreeMap::new();
        for name in BLOBS {
            let bytes = fs::read(dir.join(name))
                .map_err(|e| Error::format(name, format!("cannot read blob: {e}")))?;
            blobs.insert(name.to_string(), bytes);
        }
        // Every blob must be covered exactly; trailing or missing bytes mean
        // the meta and the data disagree.
        for (name, bytes) in &blobs {
            let mut extent = 0u64;
            for (field, fm) in meta.fields.iter().filter(|(_, fm)| &fm.file == name) {
                let size = match fm.dtype.as_str() {
                    "u8" => 1,
                    "u16" => 2,
                    "u64" | "f64" => 8,
                    other => return Err(Error::format(field, format!("unknown dtype {other}"))),
                };
                extent = extent.max(fm.byte_offset + fm.length * size);
            }
            if extent != bytes.len() as u64 {
                let field = meta
                    .fields
                    .iter()
                    .filter(|(_, fm)| &fm.file == name)
                    .max_by_key(|(_, fm)| fm.byte_offset)
                    .map(|(f, _)| f.as_str())
                    .unwrap_or(name);
                return Err(Error::format(
                    field,
                    format!("`{name}` has {} bytes, meta describes {extent}", bytes.len()),
                ));
            }
        }

        let r = BlobReader { meta: &meta, blobs };
        let store = PartitionStore {
            partition: meta.partition,
            num_partitions: meta.num_partitions as usize,
            global_ids: r.field("global_ids")?,
            vertex_types: r.field("vertex_types")?,
            out_indptr: r.field("out_indptr")?,
            out_dst: r.field("out_dst")?,
            out_weights: r.field("out_weights")?,
            out_types: TypeIndex {
                indptr: r.field("out_type_indptr")?,
                type_ids: r.field("out_type_ids")?,
                cumulative: r.field("out_type_counts")?,
            },
            in_indptr: r.field("in_indptr")?,
            in_edge_ids: r.field("in_edge_ids")?,
            in_types: TypeIndex {
                indptr: r.field("in_type_indptr")?,
                type_ids: r.field("in_type_ids")?,
                cumulative: r.field("in_type_counts")?,
            },
            out_global_degrees: r.field("out_global_degrees")?,
            in_global_degrees: r.field("in_global_degrees")?,
            partition_set: r.field("partition_set")?,
        };
        if store.global_ids.len() as u64 != meta.num_vertices {
            return Err(Error::format("global_ids", "length disagrees with num_vertices"));
        }
        if store.out_dst.len() as u64 != meta.num_edges {
            return Err(Error::format("out_dst", "length disagrees with num_edges"));
        }
        store.validate()?;
        Ok(store)
    }

    /// Checks every structural invariant; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let n = self.global_ids.len();
        let m = self.out_dst.len();
        if (self.partition as usize) >= self.num_partitions {
            return Err(Error::format("partition", "id not below num_partitions"));
        }
        if self.global_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format("global_ids", "not strictly ascending"));
        }
        for (name, len) in [
            ("vertex_types", self.vertex_types.len()),
            ("out_global_degrees", self.out_global_degrees.len()),
            ("in_global_degrees", self.in_global_degrees.len()),
        ] {
            if len != n {
                return Err(Error::format(name, format!("length {len}, expected {n}")));
            }
        }
        let width = set_bytes(self.num_partitions);
        if self.partition_set.len() != n * width {
            return Err(Error::format("partition_set", "length disagrees with vertex count"));
        }
        if self.out_weights.len() != m {
            return Err(Error::format("out_weights", "length disagrees with out_dst"));
        }
        if self.out_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::format("out_weights", "negative or non-finite weight"));
        }
        check_indptr("out_indptr", &self.out_indptr, n, m)?;
        check_indptr("in_indptr", &self.in_indptr, n, self.in_edge_ids.len())?;
        if self.in_edge_ids.len() != m {
            return Err(Error::format("in_edge_ids", "length disagrees with out_dst"));
        }
        check_types("out_type", &self.out_types, &self.out_indptr)?;
        check_types("in_type", &self.in_types, &self.in_indptr)?;

        for v in 0..n {
            let row = self.out_indptr[v] as usize..self.out_indptr[v + 1] as usize;
            for e in row.start + 1..row.end {
                let prev = (self.edge_type_of(e - 1)?, self.out_dst[e - 1]);
                let cur = (self.edge_type_of(e)?, self.out_dst[e]);
                if prev > cur {
                    return Err(Error::format("out_dst", format!("row {v} not sorted")));
                }
            }
            if self.out_global_degrees[v] < row.len() as u64 {
                return Err(Error::format("out_global_degrees", format!("row {v} below local degree")));
            }
            let in_len = self.in_indptr[v + 1] - self.in_indptr[v];
            if self.in_global_degrees[v] < in_len {
                return Err(Error::format("in_global_degrees", format!("row {v} below local degree")));
            }
            let bytes = &self.partition_set[v * width..(v + 1) * width];
            let own = self.partition as usize;
            if bytes[own / 8] & (1 << (own % 8)) == 0 {
                return Err(Error::format("partition_set", format!("row {v} lacks own partition")));
            }
            let spare = width * 8 - self.num_partitions;
            if spare > 0 && bytes[width - 1] >> (8 - spare) != 0 {
                return Err(Error::format("partition_set", format!("row {v} has bits beyond P")));
            }
        }

        let mut seen = vec![false; m];
        for v in 0..n {
            for &e in &self.in_edge_ids[self.in_indptr[v] as usize..self.in_indptr[v + 1] as usize] {
                let e = e as usize;
                if e >= m || seen[e] {
                    return Err(Error::format("in_edge_ids", format!("edge {e} invalid or repeated")));
                }
                seen[e] = true;
                if self.out_dst[e] != self.global_ids[v] {
                    return Err(Error::format("in_edge_ids", format!("edge {e} does not enter row {v}")));
                }
            }
        }
        if self.out_dst.iter().any(|d| self.global_ids.binary_search(d).is_err()) {
            return Err(Error::format("out_dst", "destination outside global_ids"));
        }
        Ok(())
    }
}

fn check_indptr(name: &str, indptr: &[u64], n: usize, len: usize) -> Result<()> {
    if indptr.len() != n + 1 {
        return Err(Error::format(name, format!("length {}, expected {}", indptr.len(), n + 1)));
    }
    if indptr[0] != 0 || indptr[n] as usize != len || indptr.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::format(name, "not a monotone offset array over the field"));
    }
    Ok(())
}

fn check_types(prefix: &str, t: &TypeIndex, rows: &[u64]) -> Result<()> {
    let indptr = format!("{prefix}_indptr");
    check_indptr(&indptr, &t.indptr, rows.len() - 1, t.type_ids.len())?;
    if t.cumulative.len() != t.type_ids.len() {
        return Err(Error::format(format!("{prefix}_counts"), "length disagrees with type ids"));
    }
    for v in 0..rows.len() - 1 {
        let (a, b) = (t.indptr[v] as usize, t.indptr[v + 1] as usize);
        let row_len = rows[v + 1] - rows[v];
        if t.type_ids[a..b].windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(format!("{prefix}_ids"), format!("row {v} not ascending")));
        }
        let cum = &t.cumulative[a..b];
        let ok = if cum.is_empty() {
            row_len == 0
        } else {
            cum[0] > 0 && cum.windows(2).all(|w| w[0] < w[1]) && cum[cum.len() - 1] == row_len
        };
        if !ok {
            return Err(Error::format(format!("{prefix}_counts"), format!("row {v} inconsistent")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Graph};
    use crate::partition::PartitionAssignment;
    use crate::pstore::build_store;

    fn store() -> PartitionStore {
        let edges = vec![
            Edge::typed(10, 20, 1, 0.5),
            Edge::typed(10, 30, 0, 2.0),
            Edge::typed(20, 30, 1, 1.0),
        ];
        let g = Graph::from_edges(edges).unwrap();
        let a = PartitionAssignment::new(2, vec![0, 0, 1]).unwrap();
        build_store(&g, &a, 0).unwrap()
    }

    #[test]
    fn round_trip_is_identical() {
        let s = store();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path().join("a")).unwrap();
        let back = PartitionStore::load(dir.path().join("a")).unwrap();
        assert_eq!(back, s);
        back.save(dir.path().join("b")).unwrap();
        for f in ["meta", "vertices.bin", "out.bin", "in.bin"] {
            let x = fs::read(dir.path().join("a").join(f)).unwrap();
            let y = fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }

    #[test]
    fn out_blob_bytes() {
        let s = store();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let out = fs::read(dir.path().join("out.bin")).unwrap();
        let mut expect = Vec::new();
        // out_indptr over locals 10, 20, 30
        for x in [0u64, 2, 2, 2] {
            expect.extend_from_slice(&x.to_le_bytes());
        }
        // vertex 10: type 0 -> 30 first, then type 1 -> 20
        for x in [30u64, 20] {
            expect.extend_from_slice(&x.to_le_bytes());
        }
        for x in [2.0f64, 0.5] {
            expect.extend_from_slice(&x.to_le_bytes());
        }
        for x in [0u64, 2, 2, 2] {
            expect.extend_from_slice(&x.to_le_bytes());
        }
        for x in [0u16, 1] {
            expect.extend_from_slice(&x.to_le_bytes());
        }
        for x in [1u64, 2] {
            expect.extend_from_slice(&x.to_le_bytes());
        }
        assert_eq!(out, expect);
    }

    #[test]
    fn truncated_blob_names_a_field() {
        let dir = tempfile::tempdir().unwrap();
        store().save(dir.path()).unwrap();
        let path = dir.path().join("in.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        match PartitionStore::load(dir.path()) {
            Err(Error::Format { field, .. }) => assert!(field.starts_with("in_"), "{field}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn meta_with_wrong_length_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        store().save(dir.path()).unwrap();
        let path = dir.path().join("meta");
        let mut meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        meta["fields"]["out_dst"]["length"] = serde_json::json!(1);
        fs::write(&path, serde_json::to_string(&meta).unwrap()).unwrap();
        match PartitionStore::load(dir.path()) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "out_dst"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        store().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("vertices.bin")).unwrap();
        match PartitionStore::load(dir.path()) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "vertices.bin"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_order_fails_validation() {
        let mut s = store();
        s.global_ids.swap(0, 1);
        assert!(matches!(s.validate(), Err(Error::Format { field, .. }) if field == "global_ids"));
    }
}
