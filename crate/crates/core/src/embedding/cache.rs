use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::warn;

use super::{EmbeddingRecord, EmbeddingVector, ItemKind};
use crate::error::Result;
use crate::jsonl;

/// Vectors keyed by (content hash, embedder tag), optionally backed by a JSONL file.
///
/// Single writer: the file is rewritten whole on [`EmbeddingCache::persist`].
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: HashMap<(u64, String), EmbeddingRecord>,
    dirty: bool,
    corrupted: usize,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache::default()
    }

    /// Opens (or starts) a cache file. Unreadable records are dropped and the
    /// file is marked for rewrite.
    pub fn open(path: &Path) -> Result<Self> {
        let mut cache = EmbeddingCache {
            path: Some(path.to_path_buf()),
            ..Default::default()
        };
        if path.exists() {
            let (records, bad) = jsonl::read_lenient::<EmbeddingRecord>(path)?;
            for (line, message) in &bad {
                warn!("{}:{line}: dropping corrupted cache record: {message}", path.display());
            }
            cache.corrupted = bad.len();
            cache.dirty = !bad.is_empty();
            for rec in records {
                cache
                    .entries
                    .insert((rec.content_hash, rec.embedder_tag.clone()), rec);
            }
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records dropped while loading.
    pub fn corrupted(&self) -> usize {
        self.corrupted
    }

    pub fn get(&self, hash: u64, tag: &str, dim: usize) -> Option<&EmbeddingVector> {
        self.entries
            .get(&(hash, tag.to_string()))
            .map(|r| &r.vector)
            .filter(|v| v.dim() == dim)
    }

    pub fn insert(&mut self, hash: u64, tag: &str, item_id: &str, kind: ItemKind, vector: EmbeddingVector) {
        self.entries.insert(
            (hash, tag.to_string()),
            EmbeddingRecord {
                item_id: item_id.to_string(),
                item_kind: kind,
                embedder_tag: tag.to_string(),
                content_hash: hash,
                vector,
            },
        );
        self.dirty = true;
    }

    /// Rewrites the backing file if anything changed. Records are sorted by key.
    pub fn persist(&mut self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if !self.dirty {
            return Ok(());
        }
        let mut records: Vec<&EmbeddingRecord> = self.entries.values().collect();
        records.sort_by(|a, b| {
            (&a.embedder_tag, a.content_hash).cmp(&(&b.embedder_tag, b.content_hash))
        });
        jsonl::write(path, records)?;
        self.dirty = false;
        Ok(())
    }
}
