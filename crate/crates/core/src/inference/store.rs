//! Chunked on-disk embedding matrices, one per layer.
//!
//! ```text
//! DIR/meta                  JSON
//! DIR/layer{k}/chunk{c}.bin rows [c*chunk_size, (c+1)*chunk_size) as f32 LE
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EMB_MAGIC: &str = "GLES";
const EMB_VERSION: u32 = 1;
pub const DEFAULT_CHUNK_SIZE: usize = 32768;

/// `(chunk, offset within chunk)` of a row.
pub fn chunk_of(row: u64, chunk_size: usize) -> (u64, usize) {
    (row / chunk_size as u64, (row % chunk_size as u64) as usize)
}

pub fn num_chunks(rows: usize, chunk_size: usize) -> usize {
    rows.div_ceil(chunk_size)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerMeta {
    pub layer: usize,
    pub dim: usize,
    pub chunks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingMeta {
    magic: String,
    version: u32,
    dtype: String,
    num_rows: usize,
    chunk_size: usize,
    layers: Vec<LayerMeta>,
}

#[derive(Debug)]
pub struct EmbeddingStore {
    dir: PathBuf,
    meta: EmbeddingMeta,
}

impl EmbeddingStore {
    /// Creates an empty store, replacing any meta already in `dir`.
    pub fn create(dir: impl AsRef<Path>, num_rows: usize, chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::InvalidArgument("chunk size must be positive".into()));
        }
        fs::create_dir_all(dir.as_ref())?;
        let store = EmbeddingStore {
            dir: dir.as_ref().to_path_buf(),
            meta: EmbeddingMeta {
                magic: EMB_MAGIC.into(),
                version: EMB_VERSION,
                dtype: "f32".into(),
                num_rows,
                chunk_size,
                layers: Vec::new(),
            },
        };
        store.write_meta()?;
        Ok(store)
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let text = fs::read_to_string(dir.join("meta"))?;
        let meta: EmbeddingMeta =
            serde_json::from_str(&text).map_err(|e| Error::format("meta", e.to_string()))?;
        if meta.magic != EMB_MAGIC || meta.version != EMB_VERSION || meta.dtype != "f32" {
            return Err(Error::format(
                "meta",
                format!("unsupported store {} v{} {}", meta.magic, meta.version, meta.dtype),
            ));
        }
        Ok(EmbeddingStore { dir, meta })
    }

    fn write_meta(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        text.push('\n');
        fs::write(self.dir.join("meta"), text)?;
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.meta.num_rows
    }

    pub fn chunk_size(&self) -> usize {
        self.meta.chunk_size
    }

    pub fn num_chunks(&self) -> usize {
        num_chunks(self.meta.num_rows, self.meta.chunk_size)
    }

    pub fn layer(&self, k: usize) -> Option<&LayerMeta> {
        self.meta.layers.iter().find(|l| l.layer == k)
    }

    fn chunk_path(&self, k: usize, c: u64) -> PathBuf {
        self.dir.join(format!("layer{k}")).join(format!("chunk{c}.bin"))
    }

    /// Writes a full `num_rows x dim` row-major matrix as layer `k`.
    pub fn write_layer(&mut self, k: usize, dim: usize, rows: &[f32]) -> Result<()> {
        if rows.len() != self.meta.num_rows * dim {
            return Err(Error::InvalidArgument(format!(
                "layer {k}: expected {} values, got {}",
                self.meta.num_rows * dim,
                rows.len()
            )));
        }
        fs::create_dir_all(self.dir.join(format!("layer{k}")))?;
        let per_chunk = self.meta.chunk_size * dim;
        let chunks = self.num_chunks();
        for c in 0..chunks {
            let slice = &rows[c * per_chunk..((c + 1) * per_chunk).min(rows.len())];
            let bytes: Vec<u8> = slice.iter().flat_map(|x| x.to_le_bytes()).collect();
            fs::write(self.chunk_path(k, c as u64), bytes)?;
        }
        self.meta.layers.retain(|l| l.layer != k);
        self.meta.layers.push(LayerMeta { layer: k, dim, chunks });
        self.meta.layers.sort_by_key(|l| l.layer);
        self.write_meta()
    }

    /// Rows of chunk `c` in layer `k`, row-major.
    pub fn read_chunk(&self, k: usize, c: u64) -> Result<Vec<f32>> {
        let l = self
            .layer(k)
            .ok_or_else(|| Error::Cache(format!("layer {k} not in store {}", self.dir.display())))?;
        if c as usize >= l.chunks {
            return Err(Error::Cache(format!("layer {k} has no chunk {c}")));
        }
        let path = self.chunk_path(k, c);
        let bytes = fs::read(&path).map_err(|e| Error::Cache(format!("{}: {e}", path.display())))?;
        let first = c as usize * self.meta.chunk_size;
        let rows = self.meta.chunk_size.min(self.meta.num_rows - first);
        if bytes.len() != rows * l.dim * 4 {
            return Err(Error::format(
                format!("layer{k}/chunk{c}.bin"),
                format!("expected {} bytes, found {}", rows * l.dim * 4, bytes.len()),
            ));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    /// The whole layer, row-major.
    pub fn read_layer(&self, k: usize) -> Result<Vec<f32>> {
        let chunks = self.layer(k).map(|l| l.chunks).unwrap_or(0);
        let mut out = Vec::new();
        for c in 0..chunks {
            out.extend(self.read_chunk(k, c as u64)?);
        }
        if self.layer(k).is_none() {
            return Err(Error::Cache(format!("layer {k} not in store")));
        }
        Ok(out)
    }
}
