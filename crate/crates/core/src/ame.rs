//! The associative memory engine: an embedding-indexed store of
//! (query, answer, metadata) entries with top-k cosine retrieval, duplicate-
//! suppressed write-back, and JSONL persistence.
//!
//! Retrieval is an exact scan — every entry is scored against the query and
//! the best k kept — because exactness is part of the contract: the serving
//! layer's decisions must be reproducible, and approximate indexes trade
//! that away. The scan is embarrassingly parallel, so the scoring kernel
//! comes in two bit-identical flavors: a rayon data-parallel one (feature
//! `parallel`, on by default) and a plain sequential fallback. Selection is
//! always sequential and fully ordered, so the feature flag can never change
//! a result, only its latency.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;

/// Errors from store operations and persistence.
#[derive(Debug, thiserror::Error)]
pub enum AmeError {
    #[error("retrieval k must be at least 1")]
    InvalidK,
    #[error("embedding dimension mismatch: store holds {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("snapshot io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt snapshot {path} line {line}: {message}")]
    CorruptSnapshot {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("snapshot {path} line {line}: embedding dimension {got}, store expects {expected}")]
    SnapshotDimension {
        path: PathBuf,
        line: usize,
        expected: usize,
        got: usize,
    },
}

/// Metadata carried alongside each stored answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryMeta {
    /// Question id the answer was produced for (informational).
    pub qid: String,
    /// Topic tag (informational).
    pub category: String,
    /// Step index or wall-clock stamp of the write-back.
    pub timestamp: u64,
}

/// One stored (query, answer, metadata, embedding) tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    /// Monotonically increasing id, unique within a store.
    pub entry_id: u64,
    /// The query text the entry was stored under.
    pub query: String,
    /// The answer text served on a hit.
    pub answer: String,
    pub meta: EntryMeta,
    /// Unit-norm key; always matches the store dimension.
    pub embedding: EmbeddingVector,
}

/// Entry plus its cosine score for one retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub entry: MemoryEntry,
    pub score: f32,
}

/// Result of one retrieval: at most `k_requested` entries in descending
/// score order, ties broken by smaller entry id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub entries: Vec<ScoredEntry>,
    pub k_requested: usize,
}

impl RetrievalResult {
    /// Highest-scoring entry, if any.
    pub fn best(&self) -> Option<&ScoredEntry> {
        self.entries.first()
    }
}

/// Outcome of a write-back attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteBackOutcome {
    /// False when duplicate suppression kept the store unchanged.
    pub inserted: bool,
    /// Id of the newly appended entry; `None` when suppressed.
    pub entry_id: Option<u64>,
}

/// Eviction strategy. Only [`EvictionPolicy::Disabled`] exists today; the
/// enum reserves the knob so stores can grow bounded variants without a
/// schema change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionPolicy {
    #[default]
    Disabled,
}

/// Store configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmeConfig {
    /// Default retrieval depth.
    pub top_k: usize,
    /// Write-backs whose embedding reaches this cosine against any existing
    /// entry are suppressed. Set above 1.0 to disable suppression entirely.
    pub dup_threshold: f32,
    pub eviction: EvictionPolicy,
}

impl Default for AmeConfig {
    fn default() -> Self {
        Self {
            top_k: 3,
            dup_threshold: 0.999,
            eviction: EvictionPolicy::Disabled,
        }
    }
}

/// Aggregate store counters for monitoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub entry_count: usize,
    /// Entries per category tag, ordered for stable serialization.
    pub per_category: BTreeMap<String, usize>,
    /// Highest id handed out so far (0 when empty).
    pub last_entry_id: u64,
}

/// Scoring kernels shared by retrieval and the benchmark suite.
///
/// Both kernels compute, for every entry, the same f64-accumulated dot
/// product in the same per-entry order; the parallel version only splits
/// *across* entries. Their outputs are therefore bitwise identical.
pub mod scan {
    use super::MemoryEntry;
    use crate::embedding::{dot_f64, EmbeddingVector};

    /// Score every entry against `query`, one after another.
    pub fn scores_sequential(entries: &[MemoryEntry], query: &EmbeddingVector) -> Vec<f32> {
        entries
            .iter()
            .map(|e| dot_f64(e.embedding.values(), query.values()) as f32)
            .collect()
    }

    /// Score every entry against `query` across the rayon pool.
    #[cfg(feature = "parallel")]
    pub fn scores_parallel(entries: &[MemoryEntry], query: &EmbeddingVector) -> Vec<f32> {
        use rayon::prelude::*;
        entries
            .par_iter()
            .map(|e| dot_f64(e.embedding.values(), query.values()) as f32)
            .collect()
    }

    /// Kernel dispatch: parallel when the feature is on, sequential
    /// otherwise.
    pub fn scores(entries: &[MemoryEntry], query: &EmbeddingVector) -> Vec<f32> {
        #[cfg(feature = "parallel")]
        {
            scores_parallel(entries, query)
        }
        #[cfg(not(feature = "parallel"))]
        {
            scores_sequential(entries, query)
        }
    }

    /// Indices of the `k` best scores, ordered by (score descending, index
    /// ascending). Index order equals entry-id order because entries are
    /// appended with increasing ids, so this implements the documented
    /// smaller-id tie-break.
    pub fn top_k_indices(scores: &[f32], k: usize) -> Vec<usize> {
        let mut indices: Vec<usize> = (0..scores.len()).collect();
        indices.sort_unstable_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| a.cmp(&b))
        });
        indices.truncate(k);
        indices
    }
}

/// Snapshot line schema: flat JSON, one entry per line.
#[derive(Serialize)]
struct SnapshotLineOut<'a> {
    entry_id: u64,
    query: &'a str,
    answer: &'a str,
    qid: &'a str,
    category: &'a str,
    timestamp: u64,
    embedding: &'a [f32],
}

#[derive(Deserialize)]
struct SnapshotLineIn {
    entry_id: u64,
    query: String,
    answer: String,
    qid: String,
    category: String,
    timestamp: u64,
    embedding: Vec<f32>,
}

/// The in-memory associative store. Single-writer semantics; wrap in a lock
/// to share.
#[derive(Debug)]
pub struct MemoryStore {
    dim: usize,
    config: AmeConfig,
    entries: Vec<MemoryEntry>,
    next_entry_id: u64,
}

impl MemoryStore {
    /// Empty store for `dim`-dimensional keys.
    pub fn new(dim: usize, config: AmeConfig) -> Self {
        Self {
            dim,
            config,
            entries: Vec::new(),
            next_entry_id: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &AmeConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All entries in insertion (= id) order.
    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    /// Exact top-`k` retrieval by cosine. Returns fewer entries when the
    /// store is smaller than `k`; the store is never modified.
    pub fn retrieve(
        &self,
        query_embedding: &EmbeddingVector,
        k: usize,
    ) -> Result<RetrievalResult, AmeError> {
        if k == 0 {
            return Err(AmeError::InvalidK);
        }
        if query_embedding.dim() != self.dim {
            return Err(AmeError::DimensionMismatch {
                expected: self.dim,
                got: query_embedding.dim(),
            });
        }
        let scores = scan::scores(&self.entries, query_embedding);
        let picked = scan::top_k_indices(&scores, k);
        let entries = picked
            .into_iter()
            .map(|i| ScoredEntry {
                entry: self.entries[i].clone(),
                score: scores[i],
            })
            .collect();
        Ok(RetrievalResult {
            entries,
            k_requested: k,
        })
    }

    /// Append a new entry unless a near-duplicate already exists.
    ///
    /// If any stored embedding has cosine ≥ `dup_threshold` to `embedding`,
    /// nothing is inserted and the outcome reports `inserted: false`.
    pub fn write_back(
        &mut self,
        query: impl Into<String>,
        answer: impl Into<String>,
        meta: EntryMeta,
        embedding: EmbeddingVector,
    ) -> Result<WriteBackOutcome, AmeError> {
        if embedding.dim() != self.dim {
            return Err(AmeError::DimensionMismatch {
                expected: self.dim,
                got: embedding.dim(),
            });
        }
        // A threshold above 1.0 disables suppression, so skip the scan —
        // unit-vector cosines cannot reach it.
        if self.config.dup_threshold <= 1.0 {
            let scores = scan::scores(&self.entries, &embedding);
            if scores.iter().any(|&s| s >= self.config.dup_threshold) {
                return Ok(WriteBackOutcome {
                    inserted: false,
                    entry_id: None,
                });
            }
        }
        let entry_id = self.next_entry_id;
        self.next_entry_id += 1;
        self.entries.push(MemoryEntry {
            entry_id,
            query: query.into(),
            answer: answer.into(),
            meta,
            embedding,
        });
        Ok(WriteBackOutcome {
            inserted: true,
            entry_id: Some(entry_id),
        })
    }

    /// Write all entries as JSONL. Returns how many lines were written.
    pub fn snapshot(&self, path: &Path) -> Result<usize, AmeError> {
        let io_err = |source| AmeError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for e in &self.entries {
            let line = SnapshotLineOut {
                entry_id: e.entry_id,
                query: &e.query,
                answer: &e.answer,
                qid: &e.meta.qid,
                category: &e.meta.category,
                timestamp: e.meta.timestamp,
                embedding: e.embedding.values(),
            };
            let json = serde_json::to_string(&line)
                .map_err(|e| io_err(std::io::Error::other(e)))?;
            writeln!(out, "{json}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)?;
        Ok(self.entries.len())
    }

    /// Rebuild a store from a snapshot file.
    ///
    /// Embeddings are taken verbatim (validated unit-norm, never
    /// re-normalized) so a loaded store retrieves bit-identically to the one
    /// that wrote the file. Entry ids must be strictly increasing; the next
    /// id continues after the last loaded one.
    pub fn load_snapshot(path: &Path, dim: usize, config: AmeConfig) -> Result<Self, AmeError> {
        let file = File::open(path).map_err(|source| AmeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let reader = BufReader::new(file);

        let mut store = Self::new(dim, config);
        let mut last_id = 0u64;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let corrupt = |message: String| AmeError::CorruptSnapshot {
                path: path.to_path_buf(),
                line: line_no,
                message,
            };
            let line = line.map_err(|source| AmeError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: SnapshotLineIn =
                serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            if parsed.embedding.len() != dim {
                return Err(AmeError::SnapshotDimension {
                    path: path.to_path_buf(),
                    line: line_no,
                    expected: dim,
                    got: parsed.embedding.len(),
                });
            }
            if parsed.entry_id <= last_id {
                return Err(corrupt(format!(
                    "entry_id {} not greater than previous id {last_id}",
                    parsed.entry_id
                )));
            }
            last_id = parsed.entry_id;
            let embedding =
                EmbeddingVector::from_unit(parsed.embedding).map_err(|e| corrupt(e.to_string()))?;
            store.entries.push(MemoryEntry {
                entry_id: parsed.entry_id,
                query: parsed.query,
                answer: parsed.answer,
                meta: EntryMeta {
                    qid: parsed.qid,
                    category: parsed.category,
                    timestamp: parsed.timestamp,
                },
                embedding,
            });
        }
        store.next_entry_id = last_id + 1;
        Ok(store)
    }

    pub fn stats(&self) -> StoreStats {
        let mut per_category = BTreeMap::new();
        for e in &self.entries {
            *per_category.entry(e.meta.category.clone()).or_insert(0) += 1;
        }
        StoreStats {
            entry_count: self.entries.len(),
            per_category,
            last_entry_id: self.next_entry_id - 1,
        }
    }
}
