use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{Layout, RunManifest};
use crate::atomizer::Atom;
use crate::corpus::{Chunk, Query};
use crate::embedding::EmbeddingRecord;
use crate::error::{Error, Result};
use crate::index::{IndexEntry, IndexManifest, ENTRIES_FILE, MANIFEST_FILE};
use crate::jsonl;
use crate::questions::{SyntheticQuestion, DEFAULT_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    DanglingGold,
    OrphanAtom,
    OrphanQuestion,
    OrphanEntry,
    DimMismatch,
    StorageBound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    /// `file[:line]`, relative to the store root.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}: {}", self.location, self.kind, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub files_checked: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }
}

struct Checker<'a> {
    root: &'a Path,
    report: ValidationReport,
    reference_dim: Option<(usize, String)>,
}

impl Checker<'_> {
    fn loc(&self, path: &Path, line: Option<usize>) -> String {
        let rel = path.strip_prefix(self.root).unwrap_or(path).display().to_string();
        match line {
            Some(n) => format!("{rel}:{n}"),
            None => rel,
        }
    }

    fn push(&mut self, kind: FindingKind, path: &Path, line: Option<usize>, message: String) {
        let location = self.loc(path, line);
        self.report.findings.push(Finding { kind, location, message });
    }

    fn read<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> Result<Vec<(usize, T)>> {
        self.report.files_checked += 1;
        jsonl::read_numbered(path)
    }

    fn check_dim(&mut self, path: &Path, line: Option<usize>, dim: usize) {
        match &self.reference_dim {
            None => self.reference_dim = Some((dim, self.loc(path, line))),
            Some((expected, origin)) if *expected != dim => {
                let message = format!("vector dim {dim} differs from dim {expected} first seen at {origin}");
                self.push(FindingKind::DimMismatch, path, line, message);
            }
            _ => {}
        }
    }
}

fn jsonl_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Referential-integrity and storage checks over a pipeline output directory.
///
/// Reports gold labels that name no chunk, atoms/questions/index entries whose
/// parents are gone, vectors whose dimension differs from the rest of the
/// store, and question sets exceeding `budget` per atom or `budget x atoms`
/// in total (the budget comes from the run manifest when present).
pub fn validate_store(dir: &Path) -> Result<ValidationReport> {
    let layout = Layout::new(dir);
    let mut ck = Checker {
        root: dir,
        report: ValidationReport::default(),
        reference_dim: None,
    };
    let budget = if layout.manifest().exists() {
        RunManifest::load(&layout.manifest())?.question_budget
    } else {
        DEFAULT_BUDGET
    } as usize;

    let chunks_path = layout.chunks();
    let chunks: Vec<(usize, Chunk)> = ck.read(&chunks_path)?;
    let chunk_ids: HashSet<String> = chunks.iter().map(|(_, c)| c.chunk_id.clone()).collect();
    let queries_path = layout.queries();
    for (line, q) in ck.read::<Query>(&queries_path)? {
        if !chunk_ids.contains(&q.gold_chunk_id) {
            let message = format!("query {} names missing gold chunk {}", q.query_id, q.gold_chunk_id);
            ck.push(FindingKind::DanglingGold, &queries_path, Some(line), message);
        }
    }

    let mut atoms_by_mode: HashMap<String, HashSet<String>> = HashMap::new();
    for path in jsonl_files(&layout.atoms_dir())? {
        let mut ids = HashSet::new();
        for (line, atom) in ck.read::<Atom>(&path)? {
            if !chunk_ids.contains(&atom.chunk_id) {
                let message = format!("atom {} references missing chunk {}", atom.atom_id, atom.chunk_id);
                ck.push(FindingKind::OrphanAtom, &path, Some(line), message);
            }
            ids.insert(atom.atom_id);
        }
        atoms_by_mode.insert(stem(&path), ids);
    }

    for path in jsonl_files(&layout.questions_dir())? {
        let mode = stem(&path);
        let atoms = atoms_by_mode.get(&mode);
        let mut per_atom: HashMap<String, usize> = HashMap::new();
        let questions: Vec<(usize, SyntheticQuestion)> = ck.read(&path)?;
        for (line, q) in &questions {
            let atom_known = atoms.is_some_and(|a| a.contains(&q.atom_id));
            if !atom_known || !chunk_ids.contains(&q.chunk_id) {
                let message = format!(
                    "question {} references missing {} {}",
                    q.question_id,
                    if atom_known { "chunk" } else { "atom" },
                    if atom_known { &q.chunk_id } else { &q.atom_id }
                );
                ck.push(FindingKind::OrphanQuestion, &path, Some(*line), message);
            }
            *per_atom.entry(q.atom_id.clone()).or_default() += 1;
        }
        let mut over: Vec<(&String, &usize)> = per_atom.iter().filter(|(_, &n)| n > budget).collect();
        over.sort();
        for (atom, n) in over {
            let message = format!("atom {atom} has {n} questions, budget is {budget}");
            ck.push(FindingKind::StorageBound, &path, None, message);
        }
        let atom_count = atoms.map_or(0, HashSet::len);
        if questions.len() > budget * atom_count {
            let message = format!(
                "{} questions exceed {budget} x {atom_count} atoms",
                questions.len()
            );
            ck.push(FindingKind::StorageBound, &path, None, message);
        }
    }

    for path in jsonl_files(&layout.embeddings_dir())? {
        for (line, rec) in ck.read::<EmbeddingRecord>(&path)? {
            ck.check_dim(&path, Some(line), rec.vector.dim());
        }
    }

    let indices = layout.indices_dir();
    if indices.is_dir() {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&indices)
            .map_err(|e| Error::io(&indices, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for d in dirs {
            let manifest_path = d.join(MANIFEST_FILE);
            ck.report.files_checked += 1;
            let manifest: IndexManifest = jsonl::read_json(&manifest_path)?;
            ck.check_dim(&manifest_path, None, manifest.dim);
            let entries_path = d.join(ENTRIES_FILE);
            for (line, entry) in ck.read::<IndexEntry>(&entries_path)? {
                if entry.vector.dim() != manifest.dim {
                    let message = format!(
                        "entry {} has dim {}, index declares {}",
                        entry.entry_id,
                        entry.vector.dim(),
                        manifest.dim
                    );
                    ck.push(FindingKind::DimMismatch, &entries_path, Some(line), message);
                }
                if !chunk_ids.contains(&entry.chunk_id) {
                    let message = format!("entry {} references missing chunk {}", entry.entry_id, entry.chunk_id);
                    ck.push(FindingKind::OrphanEntry, &entries_path, Some(line), message);
                }
            }
        }
    }
    Ok(ck.report)
}
