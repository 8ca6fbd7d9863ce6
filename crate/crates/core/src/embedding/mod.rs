//! Embedding vectors, embedders and the content-addressed embedding cache.

mod cache;
mod local;
mod remote;

use std::borrow::Cow;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::text::fnv1a64;

pub use cache::EmbeddingCache;
pub use local::LocalEmbedder;
pub use remote::{RemoteEmbedder, RemoteEmbedderConfig};

pub const DEFAULT_DIM: usize = 256;

/// A finite, non-zero vector of `f32`. The L2 norm is cached at construction.
#[derive(Debug, Clone)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    norm: f64,
}

impl PartialEq for EmbeddingVector {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl EmbeddingVector {
    /// Keeps values as given.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("embedding has zero dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("embedding has non-finite components".into()));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(EmbeddingVector { values, norm })
    }

    /// Scales to unit L2 norm.
    pub fn normalized(values: Vec<f32>) -> Result<Self> {
        let raw = EmbeddingVector::new(values)?;
        let norm = raw.norm;
        let values: Vec<f32> = raw.values.iter().map(|&v| (v as f64 / norm) as f32).collect();
        EmbeddingVector::new(values)
    }

    /// Accepts vectors read back from disk: already-unit vectors keep their
    /// exact bits, anything else is renormalized.
    pub fn from_stored(values: Vec<f32>) -> Result<Self> {
        let v = EmbeddingVector::new(values)?;
        if (v.norm - 1.0).abs() <= 1e-4 {
            Ok(v)
        } else {
            EmbeddingVector::normalized(v.values)
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Dot product with `f32` products accumulated in `f64`.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn l2_norm(values: &[f32]) -> f64 {
    values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
}

impl Serialize for EmbeddingVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.values.serialize(s)
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f32>::deserialize(d)?;
        EmbeddingVector::from_stored(values).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Chunk,
    Atom,
    Question,
    Query,
    Rewrite,
}

impl ItemKind {
    pub fn is_query_side(self) -> bool {
        matches!(self, ItemKind::Query | ItemKind::Rewrite)
    }
}

impl fmt::Display for ItemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ItemKind::Chunk => "chunk",
            ItemKind::Atom => "atom",
            ItemKind::Question => "question",
            ItemKind::Query => "query",
            ItemKind::Rewrite => "rewrite",
        })
    }
}

impl FromStr for ItemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "chunk" | "chunks" => ItemKind::Chunk,
            "atom" | "atoms" => ItemKind::Atom,
            "question" | "questions" => ItemKind::Question,
            "query" | "queries" => ItemKind::Query,
            "rewrite" | "rewrites" => ItemKind::Rewrite,
            other => return Err(Error::Invalid(format!("unknown item kind `{other}`"))),
        })
    }
}

/// One embedded item as persisted in `embeddings.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub item_id: String,
    pub item_kind: ItemKind,
    pub embedder_tag: String,
    #[serde(with = "u64_string")]
    pub content_hash: u64,
    pub vector: EmbeddingVector,
}

mod u64_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Hash under which embedded text is cached.
pub fn content_hash(text: &str) -> u64 {
    fnv1a64(text.as_bytes())
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Identifies the model and any input transformation; part of the cache key.
    fn tag(&self) -> &str;

    /// Embeds a batch; one unit vector per text, in order.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    /// Text actually sent to the model for an item of `kind`.
    fn prepare<'a>(&self, _kind: ItemKind, text: &'a str) -> Cow<'a, str> {
        Cow::Borrowed(text)
    }

    fn batch_size(&self) -> usize {
        64
    }

    /// Number of batches that may be embedded concurrently.
    fn parallelism(&self) -> usize {
        1
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn tag(&self) -> &str {
        (**self).tag()
    }
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_texts(texts)
    }
    fn prepare<'a>(&self, kind: ItemKind, text: &'a str) -> Cow<'a, str> {
        (**self).prepare(kind, text)
    }
    fn batch_size(&self) -> usize {
        (**self).batch_size()
    }
    fn parallelism(&self) -> usize {
        (**self).parallelism()
    }
}

pub fn embed_text(text: &str, kind: ItemKind, embedder: &dyn Embedder) -> Result<EmbeddingVector> {
    if text.trim().is_empty() {
        return Err(Error::Invalid("cannot embed empty text".into()));
    }
    let prepared = embedder.prepare(kind, text);
    let mut out = embedder.embed_texts(&[prepared.as_ref()])?;
    let v = out
        .pop()
        .ok_or_else(|| Error::Embedder(crate::generation::GenError::Protocol("no vector returned".into())))?;
    check_dim(&v, embedder.dim())?;
    Ok(v)
}

fn check_dim(v: &EmbeddingVector, dim: usize) -> Result<()> {
    if v.dim() != dim {
        return Err(Error::Embedder(crate::generation::GenError::Protocol(format!(
            "embedder declared dim {dim} but returned {}",
            v.dim()
        ))));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedItem {
    pub id: String,
    pub kind: ItemKind,
    pub text: String,
}

impl EmbedItem {
    pub fn new(id: impl Into<String>, kind: ItemKind, text: impl Into<String>) -> Self {
        EmbedItem {
            id: id.into(),
            kind,
            text: text.into(),
        }
    }
}

/// Embeds `items`, reusing cached vectors keyed by (content hash, embedder tag).
/// New vectors are added to the cache and the cache file is rewritten.
pub fn embed_batch(
    items: &[EmbedItem],
    embedder: &dyn Embedder,
    cache: &mut EmbeddingCache,
) -> Result<Vec<EmbeddingRecord>> {
    let mut ids = HashSet::with_capacity(items.len());
    for item in items {
        if !ids.insert(item.id.as_str()) {
            return Err(Error::Invalid(format!("duplicate item id `{}`", item.id)));
        }
        if item.text.trim().is_empty() {
            return Err(Error::Invalid(format!("item `{}` has empty text", item.id)));
        }
    }
    let tag = embedder.tag().to_string();
    let dim = embedder.dim();

    // Distinct (kind-prepared) misses, keyed by content hash.
    let mut pending: Vec<(u64, &EmbedItem)> = Vec::new();
    let mut queued = HashSet::new();
    for item in items {
        let hash = content_hash(&item.text);
        let key_hash = prepared_hash(embedder, item, hash);
        if cache.get(key_hash, &tag, dim).is_none() && queued.insert(key_hash) {
            pending.push((key_hash, item));
        }
    }

    if !pending.is_empty() {
        let batches: Vec<&[(u64, &EmbedItem)]> = pending.chunks(embedder.batch_size().max(1)).collect();
        let results = crate::parallel::map_ordered(&batches, embedder.parallelism(), |batch| {
            let prepared: Vec<Cow<str>> = batch
                .iter()
                .map(|(_, item)| embedder.prepare(item.kind, &item.text))
                .collect();
            let texts: Vec<&str> = prepared.iter().map(|c| c.as_ref()).collect();
            Ok(embedder.embed_texts(&texts).map_err(|e| e.to_string()))
        })?;
        let mut failed = Vec::new();
        let mut message = String::new();
        for (batch, result) in batches.iter().zip(results) {
            match result {
                Ok(vectors) if vectors.len() == batch.len() => {
                    for ((hash, item), v) in batch.iter().zip(vectors) {
                        check_dim(&v, dim)?;
                        cache.insert(*hash, &tag, &item.id, item.kind, v);
                    }
                }
                Ok(vectors) => {
                    message = format!("expected {} vectors, got {}", batch.len(), vectors.len());
                    failed.extend(batch.iter().map(|(_, i)| i.id.clone()));
                }
                Err(e) => {
                    message = e;
                    failed.extend(batch.iter().map(|(_, i)| i.id.clone()));
                }
            }
        }
        cache.persist()?;
        if !failed.is_empty() {
            return Err(Error::EmbedFailed { ids: failed, message });
        }
    }

    items
        .iter()
        .map(|item| {
            let hash = content_hash(&item.text);
            let vector = cache
                .get(prepared_hash(embedder, item, hash), &tag, dim)
                .cloned()
                .expect("every item embedded or cached");
            Ok(EmbeddingRecord {
                item_id: item.id.clone(),
                item_kind: item.kind,
                embedder_tag: tag.clone(),
                content_hash: hash,
                vector,
            })
        })
        .collect()
}

/// Cache key: the content hash, salted with the prefix role when the embedder
/// treats queries and passages differently.
fn prepared_hash(embedder: &dyn Embedder, item: &EmbedItem, hash: u64) -> u64 {
    match embedder.prepare(item.kind, &item.text) {
        Cow::Borrowed(_) => hash,
        Cow::Owned(prepared) => content_hash(&prepared),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_has_unit_norm() {
        let v = EmbeddingVector::normalized(vec![3.0, 4.0]).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-7);
        assert_eq!(v.values(), &[0.6, 0.8]);
    }

    #[test]
    fn zero_and_nonfinite_rejected() {
        assert!(matches!(EmbeddingVector::new(vec![0.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(EmbeddingVector::new(vec![f32::NAN, 1.0]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
    }

    #[test]
    fn stored_unit_vectors_keep_bits() {
        let v = EmbeddingVector::normalized(vec![0.3, -1.7, 2.2, 0.01]).unwrap();
        let back = EmbeddingVector::from_stored(v.values().to_vec()).unwrap();
        assert_eq!(back.values(), v.values());
        let scaled = EmbeddingVector::from_stored(vec![2.0, 0.0]).unwrap();
        assert_eq!(scaled.values(), &[1.0, 0.0]);
    }

    #[test]
    fn record_json_shape() {
        let rec = EmbeddingRecord {
            item_id: "a".into(),
            item_kind: ItemKind::Rewrite,
            embedder_tag: "t".into(),
            content_hash: u64::MAX,
            vector: EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap(),
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"item_id":"a","item_kind":"rewrite","embedder_tag":"t","content_hash":"18446744073709551615","vector":[1.0,0.0]}"#
        );
        let back: EmbeddingRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }
}
