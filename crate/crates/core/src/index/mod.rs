//! Exact dense retrieval over chunk, atom or question embeddings.
//!
//! Every search is a full scan. Entries map back to their chunk, and a ranking
//! keeps only the best-scoring entry per chunk.

mod prune;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atomizer::Atom;
use crate::corpus::{Chunk, Query};
use crate::embedding::{EmbeddingRecord, EmbeddingVector, ItemKind};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::questions::SyntheticQuestion;

pub use prune::{prune_questions, sample_questions, sweep_tau, PruneConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENTRIES_FILE: &str = "embeddings.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Chunk,
    Atom,
    Question,
}

impl Granularity {
    pub fn item_kind(self) -> ItemKind {
        match self {
            Granularity::Chunk => ItemKind::Chunk,
            Granularity::Atom => ItemKind::Atom,
            Granularity::Question => ItemKind::Question,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Chunk => "chunk",
            Granularity::Atom => "atom",
            Granularity::Question => "question",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chunk" => Ok(Granularity::Chunk),
            "atom" => Ok(Granularity::Atom),
            "question" => Ok(Granularity::Question),
            other => Err(Error::Invalid(format!("unknown granularity `{other}`"))),
        }
    }
}

/// An indexed vector and the chunk (and atom/question) it stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    #[serde(rename = "item_id")]
    pub entry_id: String,
    pub item_kind: ItemKind,
    pub embedder_tag: String,
    #[serde(with = "hash_string")]
    pub content_hash: u64,
    pub vector: EmbeddingVector,
    pub chunk_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_index: Option<u32>,
}

mod hash_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl IndexEntry {
    fn from_record(rec: &EmbeddingRecord, chunk_id: &str) -> IndexEntry {
        IndexEntry {
            entry_id: rec.item_id.clone(),
            item_kind: rec.item_kind,
            embedder_tag: rec.embedder_tag.clone(),
            content_hash: rec.content_hash,
            vector: rec.vector.clone(),
            chunk_id: chunk_id.to_string(),
            atom_id: None,
            question_id: None,
            atom_index: None,
            question_index: None,
        }
    }

    /// Ordering key used to pick which of two near-duplicate questions goes.
    pub(crate) fn ordinal(&self) -> (u32, u32) {
        (
            self.atom_index.unwrap_or(u32::MAX),
            self.question_index.unwrap_or(u32::MAX),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub granularity: Granularity,
    pub dim: usize,
    pub embedder_tag: String,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    granularity: Granularity,
    dim: usize,
    embedder_tag: String,
    entries: Vec<IndexEntry>,
    // dense chunk ordinal per entry, and the chunk ids by ordinal
    chunk_of: Vec<usize>,
    chunk_ids: Vec<String>,
}

impl PartialEq for VectorIndex {
    fn eq(&self, other: &Self) -> bool {
        self.granularity == other.granularity
            && self.dim == other.dim
            && self.embedder_tag == other.embedder_tag
            && self.entries == other.entries
    }
}

impl VectorIndex {
    pub fn new(
        granularity: Granularity,
        dim: usize,
        embedder_tag: impl Into<String>,
        entries: Vec<IndexEntry>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("index dim must be positive".into()));
        }
        let mut ids = HashSet::with_capacity(entries.len());
        let mut chunk_pos: HashMap<String, usize> = HashMap::new();
        let mut chunk_ids = Vec::new();
        let mut chunk_of = Vec::with_capacity(entries.len());
        for e in &entries {
            if e.vector.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: e.vector.dim(),
                });
            }
            if !ids.insert(e.entry_id.as_str()) {
                return Err(Error::Integrity(format!("duplicate entry id `{}`", e.entry_id)));
            }
            let shape_ok = match granularity {
                Granularity::Chunk => e.atom_id.is_none() && e.question_id.is_none(),
                Granularity::Atom => e.atom_id.is_some() && e.question_id.is_none(),
                Granularity::Question => e.atom_id.is_some() && e.question_id.is_some(),
            };
            if !shape_ok {
                return Err(Error::Integrity(format!(
                    "entry `{}` has provenance inconsistent with a {granularity} index",
                    e.entry_id
                )));
            }
            let next = chunk_ids.len();
            let pos = *chunk_pos.entry(e.chunk_id.clone()).or_insert_with(|| {
                chunk_ids.push(e.chunk_id.clone());
                next
            });
            chunk_of.push(pos);
        }
        Ok(VectorIndex {
            granularity,
            dim,
            embedder_tag: embedder_tag.into(),
            entries,
            chunk_of,
            chunk_ids,
        })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_tag(&self) -> &str {
        &self.embedder_tag
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct chunks represented.
    pub fn chunk_count(&self) -> usize {
        self.chunk_ids.len()
    }

    pub(crate) fn with_entries(&self, entries: Vec<IndexEntry>) -> Result<VectorIndex> {
        VectorIndex::new(self.granularity, self.dim, self.embedder_tag.clone(), entries)
    }

    /// Positions of entries grouped by chunk, in first-appearance order.
    pub fn chunk_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.chunk_ids.len()];
        for (i, &c) in self.chunk_of.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }

    pub fn manifest(&self) -> IndexManifest {
        IndexManifest {
            granularity: self.granularity,
            dim: self.dim,
            embedder_tag: self.embedder_tag.clone(),
            count: self.entries.len(),
        }
    }

    /// Writes `manifest.json` and `embeddings.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        jsonl::write(&dir.join(ENTRIES_FILE), &self.entries)?;
        jsonl::write_json(&dir.join(MANIFEST_FILE), &self.manifest())
    }

    pub fn load(dir: &Path) -> Result<VectorIndex> {
        let manifest: IndexManifest = jsonl::read_json(&dir.join(MANIFEST_FILE))?;
        let entries: Vec<IndexEntry> = jsonl::read(&dir.join(ENTRIES_FILE))?;
        if entries.len() != manifest.count {
            return Err(Error::Integrity(format!(
                "{}: manifest count {} but {} entries",
                dir.display(),
                manifest.count,
                entries.len()
            )));
        }
        VectorIndex::new(manifest.granularity, manifest.dim, manifest.embedder_tag, entries)
    }

    /// Exact top-`k` distinct chunks by cosine distance. Entries are ranked by
    /// (distance, entry_id); each chunk is represented by its first entry in
    /// that order.
    pub fn search(&self, query_id: &str, query: &EmbeddingVector, k: usize) -> Result<RankedChunks> {
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let mut best: Vec<Option<(f64, usize)>> = vec![None; self.chunk_ids.len()];
        for (i, entry) in self.entries.iter().enumerate() {
            let d = distance_unchecked(query, &entry.vector);
            let slot = &mut best[self.chunk_of[i]];
            let better = match *slot {
                None => true,
                Some((bd, bi)) => rank_cmp(d, i, bd, bi, &self.entries).is_lt(),
            };
            if better {
                *slot = Some((d, i));
            }
        }
        let mut reps: Vec<(f64, usize)> = best.into_iter().flatten().collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| rank_cmp(a.0, a.1, b.0, b.1, &self.entries);
        if reps.len() > k {
            reps.select_nth_unstable_by(k - 1, cmp);
            reps.truncate(k);
        }
        reps.sort_by(cmp);
        Ok(RankedChunks {
            query_id: query_id.to_string(),
            k,
            ranked: reps
                .into_iter()
                .map(|(d, i)| (self.entries[i].chunk_id.clone(), d))
                .collect(),
        })
    }
}

fn rank_cmp(da: f64, ia: usize, db: f64, ib: usize, entries: &[IndexEntry]) -> std::cmp::Ordering {
    da.total_cmp(&db)
        .then_with(|| entries[ia].entry_id.cmp(&entries[ib].entry_id))
}

/// `1 - a·b / (|a||b|)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(distance_unchecked(a, b))
}

pub(crate) fn distance_unchecked(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    (1.0 - a.dot(b) / (a.norm() * b.norm())).clamp(0.0, 2.0)
}

/// Ranked distinct chunks for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedChunks {
    pub query_id: String,
    pub k: usize,
    pub ranked: Vec<(String, f64)>,
}

impl RankedChunks {
    /// 1-based rank of `chunk_id`, if retrieved.
    pub fn rank_of(&self, chunk_id: &str) -> Option<usize> {
        self.ranked.iter().position(|(c, _)| c == chunk_id).map(|p| p + 1)
    }
}

/// Query-side embeddings keyed by query_id.
#[derive(Debug, Clone, Default)]
pub struct QueryEmbeddings {
    pub text: HashMap<String, EmbeddingVector>,
    pub rewrite: HashMap<String, EmbeddingVector>,
}

impl QueryEmbeddings {
    /// Sorts query and rewrite records into their maps; other kinds are ignored.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a EmbeddingRecord>) -> Self {
        let mut out = QueryEmbeddings::default();
        for r in records {
            match r.item_kind {
                ItemKind::Query => {
                    out.text.insert(r.item_id.clone(), r.vector.clone());
                }
                ItemKind::Rewrite => {
                    out.rewrite.insert(r.item_id.clone(), r.vector.clone());
                }
                _ => {}
            }
        }
        out
    }
}

/// Searches every query (or its rewrite when `use_rewrite`), order preserved.
pub fn retrieve_run(
    index: &VectorIndex,
    queries: &[Query],
    embeddings: &QueryEmbeddings,
    k: usize,
    use_rewrite: bool,
) -> Result<Vec<RankedChunks>> {
    let source = if use_rewrite {
        &embeddings.rewrite
    } else {
        &embeddings.text
    };
    let missing: Vec<String> = queries
        .iter()
        .filter(|q| !source.contains_key(&q.query_id))
        .map(|q| q.query_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    queries
        .par_iter()
        .map(|q| index.search(&q.query_id, &source[&q.query_id], k))
        .collect()
}

fn lookup<'a>(
    by_id: &'a HashMap<&str, &EmbeddingRecord>,
    ids: impl Iterator<Item = &'a str>,
) -> Result<Vec<&'a EmbeddingRecord>> {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for id in ids {
        match by_id.get(id) {
            Some(r) => found.push(*r),
            None => missing.push(id.to_string()),
        }
    }
    if missing.is_empty() {
        Ok(found)
    } else {
        Err(Error::MissingEmbeddings(missing))
    }
}

fn records_by_id(records: &[EmbeddingRecord], kind: ItemKind) -> HashMap<&str, &EmbeddingRecord> {
    records
        .iter()
        .filter(|r| r.item_kind == kind)
        .map(|r| (r.item_id.as_str(), r))
        .collect()
}

fn infer_shape(records: &[&EmbeddingRecord]) -> Result<(usize, String)> {
    let first = records.first().ok_or(Error::EmptyIndex)?;
    Ok((first.vector.dim(), first.embedder_tag.clone()))
}

pub fn build_chunk_index(records: &[EmbeddingRecord], chunks: &[Chunk]) -> Result<VectorIndex> {
    let by_id = records_by_id(records, ItemKind::Chunk);
    let found = lookup(&by_id, chunks.iter().map(|c| c.chunk_id.as_str()))?;
    let (dim, tag) = infer_shape(&found)?;
    let entries = found
        .iter()
        .zip(chunks)
        .map(|(r, c)| IndexEntry::from_record(r, &c.chunk_id))
        .collect();
    VectorIndex::new(Granularity::Chunk, dim, tag, entries)
}

pub fn build_atom_index(records: &[EmbeddingRecord], atoms: &[Atom]) -> Result<VectorIndex> {
    let by_id = records_by_id(records, ItemKind::Atom);
    let found = lookup(&by_id, atoms.iter().map(|a| a.atom_id.as_str()))?;
    let (dim, tag) = infer_shape(&found)?;
    let entries = found
        .iter()
        .zip(atoms)
        .map(|(r, a)| IndexEntry {
            atom_id: Some(a.atom_id.clone()),
            atom_index: Some(a.index),
            ..IndexEntry::from_record(r, &a.chunk_id)
        })
        .collect();
    VectorIndex::new(Granularity::Atom, dim, tag, entries)
}

pub fn build_question_index(
    records: &[EmbeddingRecord],
    questions: &[SyntheticQuestion],
    atoms: &[Atom],
) -> Result<VectorIndex> {
    let atom_index: HashMap<&str, u32> = atoms.iter().map(|a| (a.atom_id.as_str(), a.index)).collect();
    let by_id = records_by_id(records, ItemKind::Question);
    let found = lookup(&by_id, questions.iter().map(|q| q.question_id.as_str()))?;
    let (dim, tag) = infer_shape(&found)?;
    let mut entries = Vec::with_capacity(questions.len());
    for (r, q) in found.iter().zip(questions) {
        let ai = *atom_index.get(q.atom_id.as_str()).ok_or_else(|| {
            Error::Integrity(format!(
                "question {} references missing atom {}",
                q.question_id, q.atom_id
            ))
        })?;
        entries.push(IndexEntry {
            atom_id: Some(q.atom_id.clone()),
            question_id: Some(q.question_id.clone()),
            atom_index: Some(ai),
            question_index: Some(q.index),
            ..IndexEntry::from_record(r, &q.chunk_id)
        });
    }
    VectorIndex::new(Granularity::Question, dim, tag, entries)
}
