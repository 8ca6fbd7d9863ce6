//! End-to-end experiment runner.
//!
//! Stages run in order and persist their artifacts under one output directory:
//!
//! ```text
//! ingest   -> corpus/{chunks,queries}.jsonl
//! atomize  -> atoms/<mode>.jsonl
//! genq     -> questions/<mode>.jsonl, rewrites.jsonl
//! embed    -> embeddings/*.jsonl
//! index    -> indices/{chunk,atom-<mode>,question-<mode>}/
//! prune    -> indices/question-<mode>-tau<tau>/
//! retrieve -> runs.jsonl
//! eval     -> report.csv, curves.csv
//! ```
//!
//! `manifest.json` records the tool version, config hash and, per stage, the
//! hash of its inputs. A stage whose inputs hash the same as in the last
//! successful run, and whose outputs all exist, is skipped.

mod config;
mod validate;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::atomizer::{atomize_corpus, Atom, UnstructuredOptions};
use crate::corpus::{self, Chunk, Query, CHUNKS_FILE, QUERIES_FILE};
use crate::embedding::{embed_batch, EmbedItem, Embedder, EmbeddingCache, EmbeddingRecord, ItemKind};
use crate::error::{Error, Result};
use crate::eval::{
    efficiency_sweep, write_comparison_csv, write_csv_file, write_curves_csv, ComparisonRow, MetricReport,
    QueryVariant, SweepSpec,
};
use crate::generation::Generator;
use crate::index::{
    build_atom_index, build_chunk_index, build_question_index, retrieve_run, sweep_tau, QueryEmbeddings, VectorIndex,
};
use crate::jsonl;
use crate::questions::{generate_corpus_questions, rewrite_queries, QuestionOptions, SyntheticQuestion};

pub use config::{
    interpolate_env, AtomizeConfig, CorpusSource, EmbedderConfig, EvalConfig, GeneratorConfig, PipelineConfig,
    QuestionConfig, SweepConfig,
};
pub use validate::{validate_store, Finding, FindingKind, ValidationReport};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STAGES: [&str; 8] = ["ingest", "atomize", "genq", "embed", "index", "prune", "retrieve", "eval"];

/// Artifact paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn chunks(&self) -> PathBuf {
        self.corpus_dir().join(CHUNKS_FILE)
    }

    pub fn queries(&self) -> PathBuf {
        self.corpus_dir().join(QUERIES_FILE)
    }

    pub fn atoms_dir(&self) -> PathBuf {
        self.root.join("atoms")
    }

    pub fn atoms(&self, mode: &str) -> PathBuf {
        self.atoms_dir().join(format!("{mode}.jsonl"))
    }

    pub fn questions_dir(&self) -> PathBuf {
        self.root.join("questions")
    }

    pub fn questions(&self, mode: &str) -> PathBuf {
        self.questions_dir().join(format!("{mode}.jsonl"))
    }

    pub fn rewrites(&self) -> PathBuf {
        self.root.join("rewrites.jsonl")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.root.join("embeddings")
    }

    pub fn embeddings(&self, name: &str) -> PathBuf {
        self.embeddings_dir().join(format!("{name}.jsonl"))
    }

    pub fn default_cache(&self) -> PathBuf {
        self.root.join("cache").join("embeddings.jsonl")
    }

    pub fn indices_dir(&self) -> PathBuf {
        self.root.join("indices")
    }

    pub fn index(&self, label: &str) -> PathBuf {
        self.indices_dir().join(label)
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs.jsonl")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn curves(&self) -> PathBuf {
        self.root.join("curves.csv")
    }
}

pub fn atom_label(mode: &str) -> String {
    format!("atom-{mode}")
}

pub fn question_label(mode: &str) -> String {
    format!("question-{mode}")
}

pub fn pruned_label(mode: &str, tau: f64) -> String {
    format!("question-{mode}-tau{tau}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Skipped,
    Failed,
    NotRun,
}

impl std::fmt::Display for StageStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            StageStatus::Ok => "ok",
            StageStatus::Skipped => "skipped",
            StageStatus::Failed => "failed",
            StageStatus::NotRun => "not_run",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub input_hash: Option<String>,
    pub elapsed_ms: u64,
    pub outputs: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub question_budget: u32,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        jsonl::read_json(path)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

/// One query's ranking against one index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: String,
    pub variant: QueryVariant,
    pub query_id: String,
    pub k: usize,
    pub ranked: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest: RunManifest,
}

struct Stage {
    name: &'static str,
    inputs: Vec<PathBuf>,
    params: serde_json::Value,
    outputs: Vec<PathBuf>,
}

fn hash_path(hasher: &mut Sha256, root: &Path, path: &Path) -> Result<()> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for entry in entries {
            hash_path(hasher, root, &entry)?;
        }
    } else {
        let rel = path.strip_prefix(root).unwrap_or(path);
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(())
}

fn input_hash(stage: &Stage, root: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(stage.name.as_bytes());
    hasher.update([0]);
    hasher.update(serde_json::to_vec(&stage.params).expect("params serialize"));
    for input in &stage.inputs {
        hash_path(&mut hasher, root, input)?;
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

struct Context<'a> {
    config: &'a PipelineConfig,
    layout: Layout,
    generator: &'a dyn Generator,
    max_in_flight: usize,
    embedder: &'a dyn Embedder,
}

impl Context<'_> {
    fn modes(&self) -> Vec<String> {
        self.config.atomize.modes.clone()
    }

    fn sorted_taus(&self) -> Vec<f64> {
        let mut taus = self.config.prune_taus.clone();
        taus.sort_by(f64::total_cmp);
        taus.dedup();
        taus
    }

    fn index_labels(&self) -> Vec<String> {
        let mut labels = vec!["chunk".to_string()];
        labels.extend(self.modes().iter().map(|m| atom_label(m)));
        labels.extend(self.modes().iter().map(|m| question_label(m)));
        for m in self.modes() {
            labels.extend(self.sorted_taus().into_iter().map(|t| pruned_label(&m, t)));
        }
        labels
    }

    fn variants(&self) -> Vec<QueryVariant> {
        if self.config.hyde {
            vec![QueryVariant::Text, QueryVariant::Hyde]
        } else {
            vec![QueryVariant::Text]
        }
    }

    fn sweep_mode(&self) -> Option<String> {
        let sweep = self.config.sweep.as_ref()?;
        Some(sweep.mode.clone().unwrap_or_else(|| self.modes()[0].clone()))
    }

    fn stages(&self) -> Vec<Stage> {
        let l = &self.layout;
        let c = self.config;
        let modes = self.modes();
        let corpus_files = vec![l.chunks(), l.queries()];
        let atom_files: Vec<PathBuf> = modes.iter().map(|m| l.atoms(m)).collect();
        let question_files: Vec<PathBuf> = modes.iter().map(|m| l.questions(m)).collect();
        let mut genq_out = question_files.clone();
        if c.hyde {
            genq_out.push(l.rewrites());
        }
        let mut emb_out = vec![l.embeddings("chunks"), l.embeddings("queries")];
        for m in &modes {
            emb_out.push(l.embeddings(&format!("atoms-{m}")));
            emb_out.push(l.embeddings(&format!("questions-{m}")));
        }
        if c.hyde {
            emb_out.push(l.embeddings("rewrites"));
        }
        let base_indices: Vec<PathBuf> = std::iter::once(l.index("chunk"))
            .chain(modes.iter().map(|m| l.index(&atom_label(m))))
            .chain(modes.iter().map(|m| l.index(&question_label(m))))
            .collect();
        let pruned: Vec<PathBuf> = modes
            .iter()
            .flat_map(|m| self.sorted_taus().into_iter().map(move |t| l.index(&pruned_label(m, t))))
            .collect();
        let all_indices: Vec<PathBuf> = self.index_labels().iter().map(|lab| l.index(lab)).collect();
        let uses_llm = modes.iter().any(|m| m != "structured");

        let source_inputs = match &c.corpus {
            CorpusSource::Jsonl { chunks, queries } => vec![c.resolve(chunks), c.resolve(queries)],
            CorpusSource::Squad { path } => vec![c.resolve(path)],
        };
        let mut eval_inputs = vec![l.runs(), l.chunks(), l.queries()];
        let mut eval_out = vec![l.report()];
        if let Some(mode) = self.sweep_mode() {
            eval_inputs.push(l.index(&question_label(&mode)));
            eval_inputs.push(l.embeddings("queries"));
            eval_out.push(l.curves());
        }
        let mut retrieve_inputs = all_indices.clone();
        retrieve_inputs.push(l.queries());
        retrieve_inputs.push(l.embeddings("queries"));
        if c.hyde {
            retrieve_inputs.push(l.embeddings("rewrites"));
        }
        let mut embed_inputs = corpus_files.clone();
        embed_inputs.extend(atom_files.clone());
        embed_inputs.extend(question_files.clone());
        if c.hyde {
            embed_inputs.push(l.rewrites());
        }
        let mut index_inputs = emb_out.clone();
        index_inputs.push(l.chunks());
        index_inputs.extend(atom_files.clone());
        index_inputs.extend(question_files.clone());

        vec![
            Stage {
                name: "ingest",
                inputs: source_inputs,
                params: json!({"corpus": c.corpus, "seed": c.seed}),
                outputs: corpus_files.clone(),
            },
            Stage {
                name: "atomize",
                inputs: vec![l.chunks()],
                params: json!({
                    "atomize": c.atomize,
                    "generator": if uses_llm { json!(c.generator) } else { json!(null) },
                }),
                outputs: atom_files.clone(),
            },
            Stage {
                name: "genq",
                inputs: [corpus_files.clone(), atom_files.clone()].concat(),
                params: json!({"questions": c.questions, "hyde": c.hyde, "generator": c.generator}),
                outputs: genq_out,
            },
            Stage {
                name: "embed",
                inputs: embed_inputs,
                params: json!({"embedder": c.embedder, "modes": modes}),
                outputs: emb_out,
            },
            Stage {
                name: "index",
                inputs: index_inputs,
                params: json!({"modes": modes}),
                outputs: base_indices,
            },
            Stage {
                name: "prune",
                inputs: modes.iter().map(|m| l.index(&question_label(m))).collect(),
                params: json!({"taus": self.sorted_taus()}),
                outputs: pruned,
            },
            Stage {
                name: "retrieve",
                inputs: retrieve_inputs,
                params: json!({"labels": self.index_labels(), "k": self.k_max(), "hyde": c.hyde}),
                outputs: vec![l.runs()],
            },
            Stage {
                name: "eval",
                inputs: eval_inputs,
                params: json!({"eval": c.eval, "sweep": c.sweep, "embedder_tag": self.embedder.tag()}),
                outputs: eval_out,
            },
        ]
    }

    fn k_max(&self) -> usize {
        self.config
            .eval
            .ks
            .iter()
            .chain(&self.config.eval.ndcg_ks)
            .copied()
            .max()
            .expect("validated non-empty")
    }

    fn run_stage(&self, name: &str) -> Result<()> {
        match name {
            "ingest" => self.ingest(),
            "atomize" => self.atomize(),
            "genq" => self.genq(),
            "embed" => self.embed(),
            "index" => self.index(),
            "prune" => self.prune(),
            "retrieve" => self.retrieve(),
            "eval" => self.eval(),
            other => unreachable!("unknown stage {other}"),
        }
    }

    fn ingest(&self) -> Result<()> {
        let c = self.config;
        let corpus = match &c.corpus {
            CorpusSource::Jsonl { chunks, queries } => corpus::ingest_jsonl(&c.resolve(chunks), &c.resolve(queries))?,
            CorpusSource::Squad { path } => corpus::ingest_squad_file(&c.resolve(path), c.seed)?.corpus,
        };
        corpus.write_jsonl(&self.layout.corpus_dir())
    }

    fn atomize(&self) -> Result<()> {
        let chunks: Vec<Chunk> = jsonl::read(&self.layout.chunks())?;
        let opts = UnstructuredOptions {
            max_atoms: self.config.atomize.max_atoms,
            ..Default::default()
        };
        for (name, mode) in self.config.modes() {
            let atoms = atomize_corpus(&chunks, mode, Some(self.generator), &opts, self.max_in_flight)?;
            jsonl::write(&self.layout.atoms(&name), &atoms)?;
        }
        Ok(())
    }

    fn genq(&self) -> Result<()> {
        let corpus = corpus::load_dir(&self.layout.corpus_dir())?;
        let opts = QuestionOptions {
            budget: self.config.questions.budget,
            temperature: self.config.questions.temperature,
            ..Default::default()
        };
        for mode in self.modes() {
            let atoms: Vec<Atom> = jsonl::read(&self.layout.atoms(&mode))?;
            let questions =
                generate_corpus_questions(&atoms, corpus.chunks(), self.generator, &opts, self.max_in_flight)?;
            jsonl::write(&self.layout.questions(&mode), &questions)?;
        }
        if self.config.hyde {
            let rewritten = rewrite_queries(corpus.queries(), self.generator, self.max_in_flight)?;
            jsonl::write(&self.layout.rewrites(), &rewritten)?;
        }
        Ok(())
    }

    fn embed(&self) -> Result<()> {
        let l = &self.layout;
        let cache_path = self
            .config
            .embedding_cache
            .as_ref()
            .map(|p| self.config.resolve(p))
            .unwrap_or_else(|| l.default_cache());
        let mut cache = EmbeddingCache::open(&cache_path)?;
        let mut emit = |name: &str, items: Vec<EmbedItem>| -> Result<()> {
            let records = embed_batch(&items, self.embedder, &mut cache)?;
            jsonl::write(&l.embeddings(name), &records)
        };
        let chunks: Vec<Chunk> = jsonl::read(&l.chunks())?;
        emit(
            "chunks",
            chunks.iter().map(|c| EmbedItem::new(&c.chunk_id, ItemKind::Chunk, &c.text)).collect(),
        )?;
        let queries: Vec<Query> = jsonl::read(&l.queries())?;
        emit(
            "queries",
            queries.iter().map(|q| EmbedItem::new(&q.query_id, ItemKind::Query, &q.text)).collect(),
        )?;
        for mode in self.modes() {
            let atoms: Vec<Atom> = jsonl::read(&l.atoms(&mode))?;
            emit(
                &format!("atoms-{mode}"),
                atoms.iter().map(|a| EmbedItem::new(&a.atom_id, ItemKind::Atom, &a.text)).collect(),
            )?;
            let questions: Vec<SyntheticQuestion> = jsonl::read(&l.questions(&mode))?;
            emit(
                &format!("questions-{mode}"),
                questions
                    .iter()
                    .map(|q| EmbedItem::new(&q.question_id, ItemKind::Question, &q.text))
                    .collect(),
            )?;
        }
        if self.config.hyde {
            let rewritten: Vec<Query> = jsonl::read(&l.rewrites())?;
            let items = rewritten
                .iter()
                .map(|q| {
                    let text = q.rewrite.as_deref().ok_or_else(|| {
                        Error::Integrity(format!("query {} has no rewrite", q.query_id))
                    })?;
                    Ok(EmbedItem::new(&q.query_id, ItemKind::Rewrite, text))
                })
                .collect::<Result<Vec<_>>>()?;
            emit("rewrites", items)?;
        }
        Ok(())
    }

    fn index(&self) -> Result<()> {
        let l = &self.layout;
        let chunks: Vec<Chunk> = jsonl::read(&l.chunks())?;
        let records: Vec<EmbeddingRecord> = jsonl::read(&l.embeddings("chunks"))?;
        build_chunk_index(&records, &chunks)?.save(&l.index("chunk"))?;
        for mode in self.modes() {
            let atoms: Vec<Atom> = jsonl::read(&l.atoms(&mode))?;
            let records: Vec<EmbeddingRecord> = jsonl::read(&l.embeddings(&format!("atoms-{mode}")))?;
            build_atom_index(&records, &atoms)?.save(&l.index(&atom_label(&mode)))?;
            let questions: Vec<SyntheticQuestion> = jsonl::read(&l.questions(&mode))?;
            let records: Vec<EmbeddingRecord> = jsonl::read(&l.embeddings(&format!("questions-{mode}")))?;
            build_question_index(&records, &questions, &atoms)?.save(&l.index(&question_label(&mode)))?;
        }
        Ok(())
    }

    fn prune(&self) -> Result<()> {
        let taus = self.sorted_taus();
        if taus.is_empty() {
            return Ok(());
        }
        for mode in self.modes() {
            let index = VectorIndex::load(&self.layout.index(&question_label(&mode)))?;
            for (tau, count, pruned) in sweep_tau(&index, &taus)? {
                info!("{mode}: tau {tau} keeps {count} of {} questions", index.len());
                pruned.save(&self.layout.index(&pruned_label(&mode, tau)))?;
            }
        }
        Ok(())
    }

    fn query_embeddings(&self) -> Result<QueryEmbeddings> {
        let mut records: Vec<EmbeddingRecord> = jsonl::read(&self.layout.embeddings("queries"))?;
        if self.config.hyde {
            records.extend(jsonl::read::<EmbeddingRecord>(&self.layout.embeddings("rewrites"))?);
        }
        Ok(QueryEmbeddings::from_records(&records))
    }

    fn retrieve(&self) -> Result<()> {
        let queries: Vec<Query> = jsonl::read(&self.layout.queries())?;
        let embeddings = self.query_embeddings()?;
        let mut records = Vec::new();
        for label in self.index_labels() {
            let index = VectorIndex::load(&self.layout.index(&label))?;
            for variant in self.variants() {
                let runs = retrieve_run(&index, &queries, &embeddings, self.k_max(), variant == QueryVariant::Hyde)?;
                records.extend(runs.into_iter().map(|r| RunRecord {
                    index: label.clone(),
                    variant,
                    query_id: r.query_id,
                    k: r.k,
                    ranked: r.ranked,
                }));
            }
        }
        jsonl::write(&self.layout.runs(), &records)
    }

    fn eval(&self) -> Result<()> {
        let l = &self.layout;
        let corpus = corpus::load_dir(&l.corpus_dir())?;
        let gold = corpus.gold();
        let records: Vec<RunRecord> = jsonl::read(&l.runs())?;
        let mut order: Vec<(String, QueryVariant)> = Vec::new();
        let mut groups: HashMap<(String, QueryVariant), Vec<crate::index::RankedChunks>> = HashMap::new();
        for r in records {
            let key = (r.index.clone(), r.variant);
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(crate::index::RankedChunks {
                query_id: r.query_id,
                k: r.k,
                ranked: r.ranked,
            });
        }
        let ev = &self.config.eval;
        let mut rows = Vec::with_capacity(order.len());
        for key in order {
            let runs = &groups[&key];
            let (label, variant) = key;
            rows.push(ComparisonRow {
                report: MetricReport::evaluate(format!("{label}/{variant}"), runs, &gold, &ev.ks, &ev.ndcg_ks)?,
                index_label: label,
                embedder_tag: self.embedder.tag().to_string(),
                variant,
            });
        }
        write_csv_file(&l.report(), |buf| write_comparison_csv(buf, &ev.dataset, &rows))?;

        if let (Some(sweep), Some(mode)) = (&self.config.sweep, self.sweep_mode()) {
            let index = VectorIndex::load(&l.index(&question_label(&mode)))?;
            let spec = SweepSpec {
                fractions: sweep.fractions.clone(),
                seeds: sweep.seeds.clone(),
                taus: sweep.taus.clone(),
                ks: ev.ks.clone(),
            };
            let curves = efficiency_sweep(&index, &corpus, &self.query_embeddings()?, &spec)?;
            write_csv_file(&l.curves(), |buf| write_curves_csv(buf, &curves))?;
        }
        Ok(())
    }
}

fn rel(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned()
}

fn write_manifest(layout: &Layout, manifest: &RunManifest) -> Result<()> {
    jsonl::write_json(&layout.manifest(), manifest)
}

/// Runs every stage, skipping those whose inputs are unchanged since the
/// last successful run into the same directory.
///
/// A directory holding a run with a different config hash is refused.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    let layout = Layout::new(config.output_dir());
    fs::create_dir_all(layout.root()).map_err(|e| Error::io(layout.root(), e))?;
    let config_hash = config.hash();
    let previous = if layout.manifest().exists() {
        let m = RunManifest::load(&layout.manifest())
            .map_err(|e| Error::Config(format!("unreadable manifest: {e}")))?;
        if m.config_hash != config_hash {
            return Err(Error::Config(format!(
                "{} holds a run with a different config; use a fresh output directory",
                layout.root().display()
            )));
        }
        Some(m)
    } else {
        None
    };

    let (generator, max_in_flight) = config.generator.build().map_err(|e| Error::Config(e.to_string()))?;
    let embedder = config.embedder.build().map_err(|e| Error::Config(e.to_string()))?;
    let ctx = Context {
        config,
        layout: layout.clone(),
        generator: generator.as_ref(),
        max_in_flight,
        embedder: embedder.as_ref(),
    };

    let stages = ctx.stages();
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash,
        question_budget: config.questions.budget,
        stages: stages
            .iter()
            .map(|s| StageRecord {
                name: s.name.to_string(),
                status: StageStatus::NotRun,
                input_hash: None,
                elapsed_ms: 0,
                outputs: s.outputs.iter().map(|p| rel(layout.root(), p)).collect(),
                error: None,
            })
            .collect(),
    };

    for (i, stage) in stages.iter().enumerate() {
        let started = Instant::now();
        let outcome = input_hash(stage, layout.root()).and_then(|hash| {
            let prior = previous.as_ref().and_then(|m| m.stage(stage.name));
            let reusable = prior.is_some_and(|p| {
                matches!(p.status, StageStatus::Ok | StageStatus::Skipped)
                    && p.input_hash.as_deref() == Some(hash.as_str())
            }) && stage.outputs.iter().all(|o| o.exists());
            if reusable {
                info!("stage {}: inputs unchanged, skipping", stage.name);
                return Ok((hash, StageStatus::Skipped));
            }
            info!("stage {}: running", stage.name);
            ctx.run_stage(stage.name)?;
            Ok((hash, StageStatus::Ok))
        });
        let record = &mut manifest.stages[i];
        record.elapsed_ms = started.elapsed().as_millis() as u64;
        match outcome {
            Ok((hash, status)) => {
                record.input_hash = Some(hash);
                record.status = status;
                write_manifest(&layout, &manifest)?;
            }
            Err(e) => {
                record.status = StageStatus::Failed;
                record.error = Some(e.to_string());
                write_manifest(&layout, &manifest)?;
                return Err(Error::Stage {
                    stage: stage.name.to_string(),
                    source: Box::new(e),
                });
            }
        }
    }
    Ok(RunSummary {
        output_dir: layout.root().to_path_buf(),
        manifest,
    })
}
