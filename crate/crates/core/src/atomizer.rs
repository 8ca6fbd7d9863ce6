//! Decomposes chunks into atoms: sentences (structured) or generated
//! stand-alone facts (unstructured).

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::generation::{render_prompt, GenerationRequest, Generator, PromptTask};
use crate::text::normalize_whitespace;

pub const DEFAULT_MAX_ATOMS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomKind {
    Structured,
    Unstructured,
}

impl AtomKind {
    fn tag(self) -> char {
        match self {
            AtomKind::Structured => 's',
            AtomKind::Unstructured => 'u',
        }
    }
}

impl fmt::Display for AtomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AtomKind::Structured => "structured",
            AtomKind::Unstructured => "unstructured",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub atom_id: String,
    pub chunk_id: String,
    pub kind: AtomKind,
    pub index: u32,
    pub text: String,
}

impl Atom {
    fn new(chunk_id: &str, kind: AtomKind, index: usize, text: String) -> Atom {
        Atom {
            atom_id: format!("{chunk_id}-{}{index:03}", kind.tag()),
            chunk_id: chunk_id.to_string(),
            kind,
            index: index as u32,
            text,
        }
    }
}

const CLOSERS: &[char] = &['"', '\'', '\u{201d}', '\u{2019}', ')', ']'];
const OPENERS: &[char] = &['"', '\'', '\u{201c}', '\u{2018}', '(', '['];
const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "mr.", "mrs.", "ms.", "dr.", "st.", "jr.", "sr.", "prof.", "etc.", "vs.",
];

/// Splits text into trimmed sentences.
///
/// A boundary sits after `.`, `?` or `!` (plus any closing quotes or brackets)
/// when followed by whitespace and then an uppercase letter, a digit or an
/// opening quote. Known abbreviations never end a sentence.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !matches!(c, '.' | '?' | '!') {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let boundary = k > j
            && k < chars.len()
            && {
                let next = chars[k].1;
                next.is_uppercase() || next.is_ascii_digit() || OPENERS.contains(&next)
            }
            && !(c == '.' && ends_with_abbreviation(&text[start..pos + 1]));
        if boundary {
            let end = chars[j - 1].0 + chars[j - 1].1.len_utf8();
            push_trimmed(&mut out, &text[start..end]);
            start = end;
            i = k;
        } else {
            i += 1;
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, segment: &'a str) {
    let s = segment.trim();
    if !s.is_empty() {
        out.push(s);
    }
}

fn ends_with_abbreviation(segment: &str) -> bool {
    let word = segment.rsplit(char::is_whitespace).next().unwrap_or("");
    let word = word.trim_start_matches(OPENERS).to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// One structured atom per sentence.
pub fn atomize_structured(chunk: &Chunk) -> Vec<Atom> {
    split_sentences(&chunk.text)
        .into_iter()
        .enumerate()
        .map(|(i, s)| Atom::new(&chunk.chunk_id, AtomKind::Structured, i, s.to_string()))
        .collect()
}

/// Strips list markers (`-`, `*`, `•`, `1.`, `2)`) and drops lines shorter than three characters.
pub fn clean_generated_lines(response: &str) -> Vec<String> {
    response
        .lines()
        .map(|line| strip_list_marker(line.trim()).trim().to_string())
        .filter(|line| line.chars().count() >= 3)
        .collect()
}

fn strip_list_marker(line: &str) -> &str {
    let rest = if let Some(rest) = line.strip_prefix(['-', '*', '•']) {
        rest
    } else {
        let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        match line[digits..].strip_prefix(['.', ')']) {
            Some(rest) if digits > 0 => rest,
            _ => return line,
        }
    };
    if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        rest
    } else {
        line
    }
}

#[derive(Debug, Clone)]
pub struct UnstructuredOptions {
    pub max_atoms: usize,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for UnstructuredOptions {
    fn default() -> Self {
        UnstructuredOptions {
            max_atoms: DEFAULT_MAX_ATOMS,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

/// Asks the generator for stand-alone facts, one atom per cleaned line.
///
/// An empty generation falls back to the sentence split (still tagged
/// unstructured, whitespace flattened).
pub fn atomize_unstructured(
    chunk: &Chunk,
    generator: &dyn Generator,
    opts: &UnstructuredOptions,
) -> Result<Vec<Atom>> {
    let prompt = render_prompt(PromptTask::Atomize, &[("chunk", chunk.text.as_str())])?;
    let request = GenerationRequest::new(prompt)?
        .with_temperature(opts.temperature)?
        .with_max_tokens(opts.max_tokens)?;
    let response = generator.generate(&request).map_err(|source| Error::Generation {
        item: chunk.chunk_id.clone(),
        source,
    })?;
    let mut lines = clean_generated_lines(&response);
    if lines.is_empty() {
        warn!(
            "empty atom generation for chunk {}; falling back to sentence split",
            chunk.chunk_id
        );
        lines = split_sentences(&chunk.text)
            .into_iter()
            .map(normalize_whitespace)
            .collect();
    }
    lines.truncate(opts.max_atoms.max(1));
    Ok(lines
        .into_iter()
        .enumerate()
        .map(|(i, text)| Atom::new(&chunk.chunk_id, AtomKind::Unstructured, i, text))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomizeMode {
    Structured,
    Llm,
}

impl FromStr for AtomizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(AtomizeMode::Structured),
            "llm" | "unstructured" => Ok(AtomizeMode::Llm),
            other => Err(Error::Invalid(format!("unknown atomization mode `{other}`"))),
        }
    }
}

/// Atomizes every chunk, issuing at most `max_in_flight` generator calls at once.
/// Output is ordered by chunk, then atom index.
pub fn atomize_corpus(
    chunks: &[Chunk],
    mode: AtomizeMode,
    generator: Option<&dyn Generator>,
    opts: &UnstructuredOptions,
    max_in_flight: usize,
) -> Result<Vec<Atom>> {
    let per_chunk: Vec<Vec<Atom>> = match mode {
        AtomizeMode::Structured => chunks.iter().map(atomize_structured).collect(),
        AtomizeMode::Llm => {
            let generator = generator
                .ok_or_else(|| Error::Config("llm atomization needs a generator".into()))?;
            crate::parallel::map_ordered(chunks, max_in_flight, |chunk| {
                atomize_unstructured(chunk, generator, opts)
            })?
        }
    };
    Ok(per_chunk.into_iter().flatten().collect())
}
