//! Hybrid retrieval substrate: a dense index and a BM25 index over the same
//! chunk set, with document-level removal and snapshot persistence.
//!
//! [`HybridIndex`] itself is single-threaded; share it behind a
//! `RwLock` so that writes are serialized and readers see whole batches.

pub mod dense;
pub mod hnsw;
pub mod sparse;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use dense::{DenseIndex, DenseMode};
pub use hnsw::HnswParams;
pub use sparse::{Bm25Params, SparseIndex};

use crate::gateway::{EmbeddingVector, NORM_TOLERANCE};
use crate::ingest::Chunk;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"MHIX";
pub const SNAPSHOT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("expected {expected} vectors for {expected} chunks, got {got}")]
    Misaligned { expected: usize, got: usize },
    #[error("vector dimension {got} does not match index dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("vector for `{chunk_id}` is not unit-normalized")]
    NotNormalized { chunk_id: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an index snapshot (bad magic)")]
    BadMagic,
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error("snapshot checksum mismatch")]
    Checksum,
    #[error("snapshot encoding error: {0}")]
    Encoding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub chunk_id: String,
    pub score: f64,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub dim: usize,
    pub dense: DenseMode,
    pub bm25: Bm25Params,
}

impl IndexConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            dense: DenseMode::hnsw(),
            bm25: Bm25Params::default(),
        }
    }

    pub fn exact(dim: usize) -> Self {
        Self {
            dense: DenseMode::Exact,
            ..Self::new(dim)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub chunks: usize,
    pub documents: usize,
    pub dim: usize,
    pub dense_mode: String,
    pub sparse_docs: usize,
    pub terms: usize,
    pub avgdl: f64,
    pub deleted_slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridIndex {
    config: IndexConfig,
    chunks: BTreeMap<String, Chunk>,
    by_doc: BTreeMap<String, BTreeSet<String>>,
    dense: DenseIndex,
    sparse: SparseIndex,
}

impl HybridIndex {
    pub fn new(config: IndexConfig) -> Self {
        Self {
            config,
            chunks: BTreeMap::new(),
            by_doc: BTreeMap::new(),
            dense: DenseIndex::new(config.dim, config.dense),
            sparse: SparseIndex::new(config.bm25),
        }
    }

    pub fn config(&self) -> IndexConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunks.get(chunk_id)
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.values()
    }

    pub fn documents(&self) -> impl Iterator<Item = &str> {
        self.by_doc.keys().map(String::as_str)
    }

    pub fn sparse(&self) -> &SparseIndex {
        &self.sparse
    }

    pub fn dense(&self) -> &DenseIndex {
        &self.dense
    }

    /// Adds or replaces chunks. The whole batch is validated before anything
    /// is written, so a bad vector leaves the index untouched.
    pub fn upsert_chunks(
        &mut self,
        chunks: &[Chunk],
        vectors: &[EmbeddingVector],
    ) -> Result<usize, IndexError> {
        if chunks.len() != vectors.len() {
            return Err(IndexError::Misaligned {
                expected: chunks.len(),
                got: vectors.len(),
            });
        }
        for (c, v) in chunks.iter().zip(vectors) {
            if v.dim() != self.config.dim {
                return Err(IndexError::Dimension {
                    expected: self.config.dim,
                    got: v.dim(),
                });
            }
            let norm = crate::gateway::l2_norm(v.values());
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(IndexError::NotNormalized {
                    chunk_id: c.chunk_id.clone(),
                });
            }
        }
        for (c, v) in chunks.iter().zip(vectors) {
            if let Some(old) = self.chunks.get(&c.chunk_id) {
                if old.doc_id != c.doc_id {
                    let doc = old.doc_id.clone();
                    self.unlink(&doc, &c.chunk_id);
                }
            }
            self.dense.insert(&c.chunk_id, v.values().to_vec());
            self.sparse.insert(&c.chunk_id, &c.text);
            self.by_doc
                .entry(c.doc_id.clone())
                .or_default()
                .insert(c.chunk_id.clone());
            self.chunks.insert(c.chunk_id.clone(), c.clone());
        }
        Ok(chunks.len())
    }

    fn unlink(&mut self, doc_id: &str, chunk_id: &str) {
        if let Some(set) = self.by_doc.get_mut(doc_id) {
            set.remove(chunk_id);
            if set.is_empty() {
                self.by_doc.remove(doc_id);
            }
        }
    }

    /// Removes every chunk of `doc_id`; unknown ids remove nothing.
    pub fn remove_document(&mut self, doc_id: &str) -> usize {
        let Some(ids) = self.by_doc.remove(doc_id) else {
            return 0;
        };
        for id in &ids {
            self.chunks.remove(id);
            self.dense.remove(id);
            self.sparse.remove(id);
        }
        ids.len()
    }

    pub fn dense_search(
        &self,
        v: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<ScoredCandidate>, IndexError> {
        self.check_dim(v)?;
        Ok(tag(self.dense.search(v.values(), k), Source::Dense))
    }

    pub fn dense_search_ef(
        &self,
        v: &EmbeddingVector,
        k: usize,
        ef: usize,
    ) -> Result<Vec<ScoredCandidate>, IndexError> {
        self.check_dim(v)?;
        Ok(tag(self.dense.search_ef(v.values(), k, ef), Source::Dense))
    }

    fn check_dim(&self, v: &EmbeddingVector) -> Result<(), IndexError> {
        if v.dim() != self.config.dim {
            return Err(IndexError::Dimension {
                expected: self.config.dim,
                got: v.dim(),
            });
        }
        Ok(())
    }

    pub fn sparse_search(&self, query: &str, k: usize) -> Vec<ScoredCandidate> {
        tag(self.sparse.search(query, k), Source::Sparse)
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.dense.set_ef_search(ef);
    }

    pub fn compact(&mut self) {
        self.dense.compact();
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            chunks: self.chunks.len(),
            documents: self.by_doc.len(),
            dim: self.config.dim,
            dense_mode: match self.config.dense {
                DenseMode::Exact => "exact".to_string(),
                DenseMode::Hnsw(p) => format!(
                    "hnsw(m={}, ef_construction={}, ef_search={})",
                    p.m,
                    p.ef_construction,
                    self.dense.ef_search().unwrap_or(p.ef_search)
                ),
            },
            sparse_docs: self.sparse.n_docs(),
            terms: self.sparse.term_count(),
            avgdl: self.sparse.avgdl(),
            deleted_slots: self.dense.deleted(),
        }
    }

    /// Snapshot layout: magic, version byte, SHA-256 of the payload, CBOR
    /// payload.
    pub fn to_bytes(&self) -> Result<Vec<u8>, IndexError> {
        let mut payload = Vec::new();
        ciborium::into_writer(self, &mut payload)
            .map_err(|e| IndexError::Encoding(e.to_string()))?;
        let mut out = Vec::with_capacity(payload.len() + 37);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.push(SNAPSHOT_VERSION);
        out.extend_from_slice(&Sha256::digest(&payload));
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < 5 || &bytes[..4] != SNAPSHOT_MAGIC {
            return Err(IndexError::BadMagic);
        }
        if bytes[4] != SNAPSHOT_VERSION {
            return Err(IndexError::Version {
                found: bytes[4],
                expected: SNAPSHOT_VERSION,
            });
        }
        if bytes.len() < 37 {
            return Err(IndexError::Checksum);
        }
        let (sum, payload) = bytes[5..].split_at(32);
        if Sha256::digest(payload).as_slice() != sum {
            return Err(IndexError::Checksum);
        }
        ciborium::from_reader(payload).map_err(|e| IndexError::Encoding(e.to_string()))
    }

    /// Writes atomically via a sibling temporary file.
    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn tag(hits: Vec<(String, f64)>, source: Source) -> Vec<ScoredCandidate> {
    hits.into_iter()
        .map(|(chunk_id, score)| ScoredCandidate {
            chunk_id,
            score,
            source,
        })
        .collect()
}
