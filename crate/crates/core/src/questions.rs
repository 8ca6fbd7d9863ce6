//! Synthetic questions per atom, and hypothesized-answer rewrites per query.

use std::collections::{HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::atomizer::Atom;
use crate::corpus::{Chunk, Query};
use crate::error::{Error, Result};
use crate::generation::{render_prompt, GenError, GenerationRequest, Generator, PromptTask};
use crate::parallel::map_ordered;
use crate::text::{normalize_whitespace, truncate_chars};

pub const DEFAULT_BUDGET: u32 = 15;
pub const MAX_QUESTION_CHARS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticQuestion {
    pub question_id: String,
    pub atom_id: String,
    pub chunk_id: String,
    pub index: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOptions {
    /// Number of generation calls per atom.
    pub budget: u32,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for QuestionOptions {
    fn default() -> Self {
        QuestionOptions {
            budget: DEFAULT_BUDGET,
            temperature: 1.0,
            max_tokens: 128,
        }
    }
}

/// Key under which two questions count as the same.
pub fn dedup_key(text: &str) -> String {
    let lowered = normalize_whitespace(&text.to_lowercase());
    lowered.trim_end_matches('?').trim_end().to_string()
}

fn first_line(text: &str) -> Option<String> {
    text.lines()
        .map(normalize_whitespace)
        .find(|l| !l.is_empty())
}

/// Issues exactly `budget` generation calls for `atom`, then collapses
/// duplicates. Failed calls are logged and skipped; the call errors only
/// when nothing usable came back.
pub fn generate_questions(
    atom: &Atom,
    chunk: &Chunk,
    generator: &dyn Generator,
    opts: &QuestionOptions,
) -> Result<Vec<SyntheticQuestion>> {
    if atom.chunk_id != chunk.chunk_id {
        return Err(Error::Invalid(format!(
            "atom {} belongs to chunk {}, not {}",
            atom.atom_id, atom.chunk_id, chunk.chunk_id
        )));
    }
    if opts.budget == 0 {
        return Err(Error::Invalid("question budget must be at least 1".into()));
    }
    let prompt = render_prompt(
        PromptTask::Question,
        &[("chunk", chunk.text.as_str()), ("atom", atom.text.as_str())],
    )?;
    let base = GenerationRequest::new(prompt)?
        .with_temperature(opts.temperature)?
        .with_max_tokens(opts.max_tokens)?;

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut last_error = None;
    for sample in 0..opts.budget {
        let request = base.clone().with_sample_index(sample);
        let text = match generator.generate(&request) {
            Ok(raw) => match first_line(&raw) {
                Some(line) => truncate_chars(&line, MAX_QUESTION_CHARS).to_string(),
                None => {
                    warn!("empty question generation for atom {} (draw {sample})", atom.atom_id);
                    last_error = Some(GenError::Protocol("empty generation".into()));
                    continue;
                }
            },
            Err(e) => {
                warn!("question generation failed for atom {} (draw {sample}): {e}", atom.atom_id);
                last_error = Some(e);
                continue;
            }
        };
        if seen.insert(dedup_key(&text)) {
            let index = out.len() as u32;
            out.push(SyntheticQuestion {
                question_id: format!("{}-q{index:02}", atom.atom_id),
                atom_id: atom.atom_id.clone(),
                chunk_id: atom.chunk_id.clone(),
                index,
                text,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Generation {
            item: atom.atom_id.clone(),
            source: last_error.unwrap_or_else(|| GenError::Protocol("no questions".into())),
        });
    }
    Ok(out)
}

/// Questions for every atom, ordered by atom (and so by chunk), then question index.
pub fn generate_corpus_questions(
    atoms: &[Atom],
    chunks: &[Chunk],
    generator: &dyn Generator,
    opts: &QuestionOptions,
    max_in_flight: usize,
) -> Result<Vec<SyntheticQuestion>> {
    let by_id: HashMap<&str, &Chunk> = chunks.iter().map(|c| (c.chunk_id.as_str(), c)).collect();
    let per_atom = map_ordered(atoms, max_in_flight, |atom| {
        let chunk = by_id.get(atom.chunk_id.as_str()).ok_or_else(|| {
            Error::Integrity(format!(
                "atom {} references missing chunk {}",
                atom.atom_id, atom.chunk_id
            ))
        })?;
        generate_questions(atom, chunk, generator, opts)
    })?;
    Ok(per_atom.into_iter().flatten().collect())
}

/// Rewrites a query into a hypothesized full-sentence answer. Only the first
/// non-empty line is kept; an empty generation falls back to the query text.
pub fn rewrite_hyde(query: &Query, generator: &dyn Generator) -> Result<String> {
    if query.text.trim().is_empty() {
        return Err(Error::Invalid(format!("query {} is empty", query.query_id)));
    }
    let prompt = render_prompt(PromptTask::Rewrite, &[("query", query.text.as_str())])?;
    let request = GenerationRequest::new(prompt)?;
    let raw = generator.generate(&request).map_err(|source| Error::Generation {
        item: query.query_id.clone(),
        source,
    })?;
    Ok(first_line(&raw).unwrap_or_else(|| {
        warn!("empty rewrite for query {}; keeping original text", query.query_id);
        normalize_whitespace(&query.text)
    }))
}

/// Returns the queries with `rewrite` filled in, order preserved.
pub fn rewrite_queries(
    queries: &[Query],
    generator: &dyn Generator,
    max_in_flight: usize,
) -> Result<Vec<Query>> {
    map_ordered(queries, max_in_flight, |q| {
        Ok(Query {
            rewrite: Some(rewrite_hyde(q, generator)?),
            ..q.clone()
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomizer::AtomKind;
    use crate::generation::stub::{AnswerPrefixStub, TableStub, TemplateQuestionStub};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn fixture() -> (Atom, Chunk) {
        let chunk = Chunk {
            chunk_id: "c7".into(),
            text: "The river floods every spring. Farmers plant after.".into(),
            source: None,
        };
        let atom = Atom {
            atom_id: "c7-s000".into(),
            chunk_id: "c7".into(),
            kind: AtomKind::Structured,
            index: 0,
            text: "The river floods every spring.".into(),
        };
        (atom, chunk)
    }

    fn opts(budget: u32) -> QuestionOptions {
        QuestionOptions {
            budget,
            ..Default::default()
        }
    }

    #[test]
    fn cyclic_templates_collapse_to_distinct_set() {
        let (atom, chunk) = fixture();
        let stub = TemplateQuestionStub { variants: 3 };
        let qs = generate_questions(&atom, &chunk, &stub, &opts(5)).unwrap();
        // draws 0..5 cycle variants 1,2,3,1,2 → three distinct texts
        let expected: Vec<String> = (0..3).map(|i| stub.question(&atom.text, i)).collect();
        let got: Vec<String> = qs.iter().map(|q| q.text.clone()).collect();
        assert_eq!(got, expected);
        assert_eq!(qs.iter().map(|q| q.index).collect::<Vec<_>>(), [0, 1, 2]);
        assert!(qs.iter().all(|q| q.chunk_id == "c7" && q.atom_id == "c7-s000"));
    }

    #[test]
    fn budget_one_gives_one() {
        let (atom, chunk) = fixture();
        let qs = generate_questions(&atom, &chunk, &TemplateQuestionStub::default(), &opts(1)).unwrap();
        assert_eq!(qs.len(), 1);
    }

    #[test]
    fn near_identical_texts_dedup() {
        assert_eq!(dedup_key("What  is X?"), dedup_key("what is x"));
        assert_ne!(dedup_key("What is X?"), dedup_key("What is Y?"));
    }

    struct Flaky(AtomicU32);
    impl Generator for Flaky {
        fn generate(&self, r: &GenerationRequest) -> Result<String, GenError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            if r.sample_index.is_multiple_of(2) {
                Err(GenError::Timeout)
            } else {
                Ok(format!("Question {}?\nextra line", r.sample_index))
            }
        }
    }

    #[test]
    fn partial_failures_keep_successes() {
        let (atom, chunk) = fixture();
        let g = Flaky(AtomicU32::new(0));
        let qs = generate_questions(&atom, &chunk, &g, &opts(6)).unwrap();
        assert_eq!(g.0.load(Ordering::SeqCst), 6);
        let got: Vec<&str> = qs.iter().map(|q| q.text.as_str()).collect();
        assert_eq!(got, ["Question 1?", "Question 3?", "Question 5?"]);
    }

    #[test]
    fn all_failures_error_with_atom_id() {
        let (atom, chunk) = fixture();
        match generate_questions(&atom, &chunk, &TableStub::default(), &opts(3)) {
            Err(Error::Generation { item, .. }) => assert_eq!(item, "c7-s000"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_chunk_rejected() {
        let (atom, mut chunk) = fixture();
        chunk.chunk_id = "other".into();
        assert!(generate_questions(&atom, &chunk, &TemplateQuestionStub::default(), &opts(1)).is_err());
    }

    #[test]
    fn long_questions_truncated() {
        let (atom, chunk) = fixture();
        let prompt = render_prompt(
            PromptTask::Question,
            &[("chunk", chunk.text.as_str()), ("atom", atom.text.as_str())],
        )
        .unwrap();
        let stub = TableStub::new([(prompt, "x".repeat(2000))]);
        let qs = generate_questions(&atom, &chunk, &stub, &opts(2)).unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].text.chars().count(), MAX_QUESTION_CHARS);
    }

    fn query(text: &str) -> Query {
        Query {
            query_id: "q1".into(),
            text: text.into(),
            gold_chunk_id: "c".into(),
            rewrite: None,
        }
    }

    #[test]
    fn hyde_stub_rewrite() {
        assert_eq!(rewrite_hyde(&query("Q?"), &AnswerPrefixStub).unwrap(), "Answer: Q?");
    }

    #[test]
    fn hyde_keeps_first_nonempty_line() {
        let q = query("What is the capital of India?");
        let prompt = render_prompt(PromptTask::Rewrite, &[("query", q.text.as_str())]).unwrap();
        let stub = TableStub::new([(
            prompt,
            "\n  The capital of India is London.  \nIt is big.\nThird line.",
        )]);
        assert_eq!(rewrite_hyde(&q, &stub).unwrap(), "The capital of India is London.");
    }

    #[test]
    fn hyde_empty_falls_back() {
        let q = query("Where?");
        let prompt = render_prompt(PromptTask::Rewrite, &[("query", "Where?")]).unwrap();
        let stub = TableStub::new([(prompt, "  \n\n")]);
        assert_eq!(rewrite_hyde(&q, &stub).unwrap(), "Where?");
    }

    #[test]
    fn hyde_generator_failure_errors() {
        assert!(rewrite_hyde(&query("Where?"), &TableStub::default()).is_err());
    }
}
