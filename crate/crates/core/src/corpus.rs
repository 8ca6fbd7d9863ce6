//! Chunks, queries and their gold labels, plus loaders that turn SQuAD-style
//! reading-comprehension data into a retrieval benchmark.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atomizer;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::text::{normalize_whitespace, word_count};

pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub text: String,
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    pub gold_chunk_id: String,
    /// Hypothesized-answer form of the query, when one has been generated.
    pub rewrite: Option<String>,
}

/// A validated, immutable set of chunks and queries.
#[derive(Debug, Clone)]
pub struct Corpus {
    chunks: Vec<Chunk>,
    queries: Vec<Query>,
    chunk_pos: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.chunks == other.chunks && self.queries == other.queries
    }
}

impl Corpus {
    /// Validates ids, texts and gold references.
    pub fn new(chunks: Vec<Chunk>, queries: Vec<Query>) -> Result<Self> {
        let mut chunk_pos = HashMap::with_capacity(chunks.len());
        let mut seen_text = HashMap::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            if chunk.text.trim().is_empty() {
                return Err(Error::Integrity(format!(
                    "chunk `{}` has empty text",
                    chunk.chunk_id
                )));
            }
            if chunk_pos.insert(chunk.chunk_id.clone(), i).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate chunk_id `{}`",
                    chunk.chunk_id
                )));
            }
            if let Some(prev) = seen_text.insert(normalize_whitespace(&chunk.text), &chunk.chunk_id) {
                return Err(Error::Integrity(format!(
                    "chunks `{prev}` and `{}` have identical text",
                    chunk.chunk_id
                )));
            }
        }

        let mut query_ids = HashSet::with_capacity(queries.len());
        let mut dangling = Vec::new();
        for query in &queries {
            if query.text.trim().is_empty() {
                return Err(Error::Integrity(format!(
                    "query `{}` has empty text",
                    query.query_id
                )));
            }
            if !query_ids.insert(query.query_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "duplicate query_id `{}`",
                    query.query_id
                )));
            }
            if !chunk_pos.contains_key(&query.gold_chunk_id) {
                dangling.push(query.query_id.clone());
            }
        }
        if !dangling.is_empty() {
            return Err(Error::Integrity(format!(
                "gold_chunk_id does not resolve for queries: {}",
                dangling.join(", ")
            )));
        }

        Ok(Corpus {
            chunks,
            queries,
            chunk_pos,
        })
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunk_pos.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// query_id → gold chunk_id.
    pub fn gold(&self) -> HashMap<String, String> {
        self.queries
            .iter()
            .map(|q| (q.query_id.clone(), q.gold_chunk_id.clone()))
            .collect()
    }

    /// Returns a copy with the given rewrites attached (keyed by query_id).
    pub fn with_rewrites(&self, rewrites: &HashMap<String, String>) -> Corpus {
        let queries = self
            .queries
            .iter()
            .map(|q| Query {
                rewrite: rewrites.get(&q.query_id).cloned().or_else(|| q.rewrite.clone()),
                ..q.clone()
            })
            .collect();
        Corpus {
            chunks: self.chunks.clone(),
            queries,
            chunk_pos: self.chunk_pos.clone(),
        }
    }

    /// Writes `chunks.jsonl` and `queries.jsonl` into `dir`.
    pub fn write_jsonl(&self, dir: &Path) -> Result<()> {
        jsonl::write(&dir.join(CHUNKS_FILE), &self.chunks)?;
        jsonl::write(&dir.join(QUERIES_FILE), &self.queries)
    }
}

pub fn ingest_jsonl(chunks_path: &Path, queries_path: &Path) -> Result<Corpus> {
    let chunks = jsonl::read(chunks_path)?;
    let queries = jsonl::read(queries_path)?;
    Corpus::new(chunks, queries)
}

/// Loads `chunks.jsonl` + `queries.jsonl` from a directory.
pub fn load_dir(dir: &Path) -> Result<Corpus> {
    ingest_jsonl(&dir.join(CHUNKS_FILE), &dir.join(QUERIES_FILE))
}

#[derive(Debug, Deserialize)]
struct SquadDoc {
    data: Vec<SquadArticle>,
}

#[derive(Debug, Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: Option<String>,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SquadAnswer {
    pub text: String,
}

/// Result of restructuring a SQuAD file.
#[derive(Debug, Clone)]
pub struct SquadIngest {
    pub corpus: Corpus,
    /// Paragraph count before merging identical contexts.
    pub raw_contexts: usize,
    /// Answer texts per query_id, kept only for label checks.
    pub answers: HashMap<String, Vec<String>>,
}

/// Restructures a SQuAD v1.1-style document: one chunk per distinct context,
/// chunk order shuffled under `seed`, one query per question.
pub fn ingest_squad(raw: &str, seed: u64) -> Result<SquadIngest> {
    let de = &mut serde_json::Deserializer::from_str(raw);
    let doc: SquadDoc = serde_path_to_error::deserialize(de).map_err(|e| Error::Squad {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    struct Slot {
        text: String,
        source: Option<String>,
    }
    let mut slots: Vec<Slot> = Vec::new();
    let mut slot_of: HashMap<String, usize> = HashMap::new();
    // (query_id, question, slot)
    let mut pending: Vec<(String, String, usize)> = Vec::new();
    let mut answers = HashMap::new();
    let mut raw_contexts = 0;

    for (ai, article) in doc.data.into_iter().enumerate() {
        for (pi, paragraph) in article.paragraphs.into_iter().enumerate() {
            raw_contexts += 1;
            let key = normalize_whitespace(&paragraph.context);
            if key.is_empty() {
                return Err(Error::Squad {
                    path: format!("data[{ai}].paragraphs[{pi}].context"),
                    message: "empty context".into(),
                });
            }
            let slot = *slot_of.entry(key).or_insert_with(|| {
                slots.push(Slot {
                    text: paragraph.context.clone(),
                    source: article.title.clone(),
                });
                slots.len() - 1
            });
            for (qi, qa) in paragraph.qas.into_iter().enumerate() {
                if qa.question.trim().is_empty() {
                    return Err(Error::Squad {
                        path: format!("data[{ai}].paragraphs[{pi}].qas[{qi}].question"),
                        message: "empty question".into(),
                    });
                }
                answers.insert(
                    qa.id.clone(),
                    qa.answers.into_iter().map(|a| a.text).collect(),
                );
                pending.push((qa.id, qa.question, slot));
            }
        }
    }

    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let width = slots.len().to_string().len().max(5);
    let mut new_id = vec![String::new(); slots.len()];
    let mut chunks = Vec::with_capacity(slots.len());
    for (pos, &slot) in order.iter().enumerate() {
        let id = format!("{pos:0width$}");
        new_id[slot] = id.clone();
        chunks.push(Chunk {
            chunk_id: id,
            text: slots[slot].text.clone(),
            source: slots[slot].source.clone(),
        });
    }

    let queries = pending
        .into_iter()
        .map(|(query_id, text, slot)| Query {
            query_id,
            text,
            gold_chunk_id: new_id[slot].clone(),
            rewrite: None,
        })
        .collect();

    Ok(SquadIngest {
        corpus: Corpus::new(chunks, queries)?,
        raw_contexts,
        answers,
    })
}

pub fn ingest_squad_file(path: &Path, seed: u64) -> Result<SquadIngest> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_squad(&raw, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean, self.std)
    }
}

/// Dataset summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub total_chunks: usize,
    pub total_queries: usize,
    pub queries_per_chunk: MeanStd,
    pub words_per_query: MeanStd,
    pub words_per_chunk: MeanStd,
    pub sentences_per_chunk: MeanStd,
}

pub fn corpus_stats(corpus: &Corpus) -> Result<StatsReport> {
    if corpus.chunks.is_empty() || corpus.queries.is_empty() {
        return Err(Error::Invalid("corpus statistics need at least one chunk and one query".into()));
    }
    let mut per_chunk: HashMap<&str, usize> = HashMap::new();
    for q in &corpus.queries {
        *per_chunk.entry(q.gold_chunk_id.as_str()).or_default() += 1;
    }
    let qpc: Vec<f64> = corpus
        .chunks
        .iter()
        .map(|c| per_chunk.get(c.chunk_id.as_str()).copied().unwrap_or(0) as f64)
        .collect();
    let wpq: Vec<f64> = corpus.queries.iter().map(|q| word_count(&q.text) as f64).collect();
    let wpc: Vec<f64> = corpus.chunks.iter().map(|c| word_count(&c.text) as f64).collect();
    let spc: Vec<f64> = corpus
        .chunks
        .iter()
        .map(|c| atomizer::split_sentences(&c.text).len() as f64)
        .collect();
    Ok(StatsReport {
        total_chunks: corpus.chunks.len(),
        total_queries: corpus.queries.len(),
        queries_per_chunk: MeanStd::of(&qpc),
        words_per_query: MeanStd::of(&wpq),
        words_per_chunk: MeanStd::of(&wpc),
        sentences_per_chunk: MeanStd::of(&spc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            text: text.into(),
            source: None,
        }
    }

    fn query(id: &str, text: &str, gold: &str) -> Query {
        Query {
            query_id: id.into(),
            text: text.into(),
            gold_chunk_id: gold.into(),
            rewrite: None,
        }
    }

    #[test]
    fn minimal_squad() {
        let raw = r#"{"data":[{"title":"T","paragraphs":[{"context":"Paris is in France.","qas":[{"id":"q1","question":"Where is Paris?","answers":[{"text":"France","answer_start":12}]}]}]}]}"#;
        let ingest = ingest_squad(raw, 1).unwrap();
        let corpus = &ingest.corpus;
        assert_eq!(corpus.chunks().len(), 1);
        assert_eq!(corpus.queries().len(), 1);
        let gold = corpus.chunk(&corpus.queries()[0].gold_chunk_id).unwrap();
        assert_eq!(gold.text, "Paris is in France.");
        assert_eq!(gold.source.as_deref(), Some("T"));
        assert_eq!(gold.chunk_id, "00000");
    }

    #[test]
    fn duplicate_contexts_across_articles_merge() {
        let raw = r#"{"data":[
            {"title":"A","paragraphs":[{"context":"Same  text here.","qas":[{"id":"a","question":"Q a?"}]},
                                       {"context":"Other text.","qas":[{"id":"b","question":"Q b?"}]}]},
            {"title":"B","paragraphs":[{"context":" Same text\nhere. ","qas":[{"id":"c","question":"Q c?"}]}]}]}"#;
        let ingest = ingest_squad(raw, 3).unwrap();
        assert_eq!(ingest.raw_contexts, 3);
        let corpus = &ingest.corpus;
        assert_eq!(corpus.chunks().len(), 2);
        let gold = corpus.gold();
        assert_eq!(gold["a"], gold["c"]);
        assert_ne!(gold["a"], gold["b"]);
        // brute-force text comparison: the merged chunk is the one whose normalized text matches
        let merged = corpus.chunk(&gold["a"]).unwrap();
        assert_eq!(normalize_whitespace(&merged.text), "Same text here.");
    }

    #[test]
    fn malformed_squad_names_path() {
        let raw = r#"{"data":[{"paragraphs":[{"context":"x","qas":[{"id":"q","question":7}]}]}]}"#;
        match ingest_squad(raw, 0) {
            Err(Error::Squad { path, .. }) => assert_eq!(path, "data[0].paragraphs[0].qas[0].question"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn dangling_gold_lists_queries() {
        let err = Corpus::new(
            vec![chunk("c1", "one")],
            vec![query("q1", "x", "c1"), query("q2", "y", "zz"), query("q3", "y", "yy")],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("q2") && msg.contains("q3") && !msg.contains("q1"), "{msg}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Corpus::new(vec![chunk("c", "a"), chunk("c", "b")], vec![]).is_err());
        assert!(Corpus::new(
            vec![chunk("c", "a")],
            vec![query("q", "x", "c"), query("q", "y", "c")]
        )
        .is_err());
    }

    #[test]
    fn stats_single_chunk() {
        let corpus = Corpus::new(
            vec![chunk("c", "One two three.")],
            vec![query("q", "two words", "c")],
        )
        .unwrap();
        let s = corpus_stats(&corpus).unwrap();
        assert_eq!(s.queries_per_chunk.mean, 1.0);
        assert_eq!(s.words_per_query.mean, 2.0);
        assert_eq!(s.words_per_chunk.mean, 3.0);
        assert_eq!(s.sentences_per_chunk.mean, 1.0);
    }

    #[test]
    fn stats_four_chunks_hand_counted() {
        // words per chunk: 2, 4, 6, 8 → mean 5, population var (9+1+1+9)/4 = 5
        // sentences per chunk: 1, 2, 3, 1 → mean 7/4
        // queries per chunk: 3, 1, 0, 0 → mean 1, var (4+0+1+1)/4 = 1.5
        let corpus = Corpus::new(
            vec![
                chunk("a", "Alpha beta."),
                chunk("b", "Gamma delta. Epsilon zeta."),
                chunk("c", "Eta theta. Iota kappa. Lambda mu."),
                chunk("d", "nu xi omicron pi rho sigma tau upsilon"),
            ],
            vec![
                query("1", "w", "a"),
                query("2", "w w", "a"),
                query("3", "w w w", "a"),
                query("4", "w w w w", "b"),
            ],
        )
        .unwrap();
        let s = corpus_stats(&corpus).unwrap();
        assert_eq!(s.words_per_chunk.mean, 5.0);
        assert!((s.words_per_chunk.std - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.sentences_per_chunk.mean, 1.75);
        assert!((s.sentences_per_chunk.std - (0.6875f64).sqrt()).abs() < 1e-12);
        assert_eq!(s.queries_per_chunk.mean, 1.0);
        assert!((s.queries_per_chunk.std - 1.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.words_per_query.mean, 2.5);
    }

    #[test]
    fn stats_empty_corpus_errors() {
        let corpus = Corpus::new(vec![], vec![]).unwrap();
        assert!(corpus_stats(&corpus).is_err());
    }
}
