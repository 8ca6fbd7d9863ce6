#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use atomlith::pipeline::PipelineConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

/// The bundled five-chunk experiment, writing into `out`.
pub fn tiny_config(out: &Path) -> PipelineConfig {
    let raw = std::fs::read_to_string(fixtures().join("tiny.toml")).unwrap();
    let raw = raw.replace("${ATOMLITH_OUT}", &out.display().to_string());
    PipelineConfig::from_toml_str(&raw, &fixtures()).unwrap()
}

/// Relative path → bytes for every file under `root`, except the run manifest.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                if rel != "manifest.json" {
                    out.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub mod gen {
    use atomlith::embedding::{EmbeddingVector, ItemKind};
    use atomlith::index::{Granularity, IndexEntry, VectorIndex};
    use rand::Rng;

    /// Small-integer components make exact distance ties common.
    pub fn vector(rng: &mut impl Rng, dim: usize) -> EmbeddingVector {
        loop {
            let values: Vec<f32> = (0..dim).map(|_| rng.random_range(-2i32..=2) as f32).collect();
            if let Ok(v) = EmbeddingVector::new(values) {
                return v;
            }
        }
    }

    /// Question-granularity index with `n` entries spread over up to `chunks` chunks.
    /// Some vectors are exact copies of earlier ones.
    pub fn question_index(rng: &mut impl Rng, n: usize, chunks: usize, dim: usize) -> VectorIndex {
        let mut entries: Vec<IndexEntry> = Vec::with_capacity(n);
        let mut next_q = vec![0u32; chunks];
        for i in 0..n {
            let c = rng.random_range(0..chunks);
            let atom = rng.random_range(0..4u32);
            let qi = next_q[c];
            next_q[c] += 1;
            let vector = if i > 0 && rng.random_bool(0.2) {
                entries[rng.random_range(0..i)].vector.clone()
            } else {
                vector(rng, dim)
            };
            entries.push(IndexEntry {
                entry_id: format!("c{c:03}-a{atom}-q{qi:03}"),
                item_kind: ItemKind::Question,
                embedder_tag: "gen".into(),
                content_hash: i as u64,
                vector,
                chunk_id: format!("c{c:03}"),
                atom_id: Some(format!("c{c:03}-a{atom}")),
                question_id: Some(format!("c{c:03}-a{atom}-q{qi:03}")),
                atom_index: Some(atom),
                question_index: Some(qi),
            });
        }
        VectorIndex::new(Granularity::Question, dim, "gen", entries).unwrap()
    }
}

pub mod oracle {
    use atomlith::embedding::EmbeddingVector;
    use atomlith::index::{IndexEntry, VectorIndex};

    /// Cosine distance straight from the definition, from raw components.
    pub fn distance(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
        let (x, y) = (a.values(), b.values());
        let dot: f64 = x.iter().zip(y).map(|(&p, &q)| p as f64 * q as f64).sum();
        let na = x.iter().map(|&p| p as f64 * p as f64).sum::<f64>().sqrt();
        let nb = y.iter().map(|&q| q as f64 * q as f64).sum::<f64>().sqrt();
        (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
    }

    /// Full sort of every entry by (distance, entry id), first hit per chunk, top k.
    pub fn search(index: &VectorIndex, query: &EmbeddingVector, k: usize) -> Vec<(String, f64)> {
        let mut all: Vec<(f64, &IndexEntry)> = index.entries().iter().map(|e| (distance(query, &e.vector), e)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.entry_id.cmp(&b.1.entry_id)));
        let mut seen = std::collections::HashSet::new();
        all.into_iter()
            .filter(|(_, e)| seen.insert(e.chunk_id.clone()))
            .take(k)
            .map(|(d, e)| (e.chunk_id.clone(), d))
            .collect()
    }

    /// Naive greedy pruning: repeatedly drop the later-ordinal member of the
    /// closest same-chunk pair while that pair is closer than `tau`.
    pub fn prune(index: &VectorIndex, tau: f64) -> Vec<String> {
        let entries = index.entries();
        let mut chunks: Vec<&str> = entries.iter().map(|e| e.chunk_id.as_str()).collect();
        chunks.sort();
        chunks.dedup();
        let mut kept = Vec::new();
        for chunk in chunks {
            let mut alive: Vec<&IndexEntry> = entries.iter().filter(|e| e.chunk_id == chunk).collect();
            loop {
                let mut best: Option<(f64, usize, usize)> = None;
                for i in 0..alive.len() {
                    for j in i + 1..alive.len() {
                        let d = distance(&alive[i].vector, &alive[j].vector);
                        if best.is_none_or(|(bd, _, _)| d < bd) {
                            best = Some((d, i, j));
                        }
                    }
                }
                match best {
                    Some((d, i, j)) if d < tau => {
                        let key = |e: &IndexEntry| (e.atom_index.unwrap(), e.question_index.unwrap());
                        let victim = if key(alive[i]) > key(alive[j]) { i } else { j };
                        alive.remove(victim);
                    }
                    _ => break,
                }
            }
            kept.extend(alive.iter().map(|e| e.entry_id.clone()));
        }
        kept.sort();
        kept
    }
}
