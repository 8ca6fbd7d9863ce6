use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use atomlith::atomizer::{atomize_corpus, Atom, AtomizeMode, UnstructuredOptions};
use atomlith::corpus::{self, corpus_stats, Chunk, Query};
use atomlith::embedding::{
    embed_batch, EmbedItem, Embedder, EmbeddingCache, EmbeddingRecord, ItemKind, LocalEmbedder, RemoteEmbedder,
    RemoteEmbedderConfig,
};
use atomlith::eval::{
    efficiency_sweep, run_comparison, write_comparison_csv, write_csv_file, write_curves_csv, QueryVariant,
    SweepSpec,
};
use atomlith::generation::{ClientConfig, Generator};
use atomlith::index::{
    build_atom_index, build_chunk_index, build_question_index, prune_questions, retrieve_run, sample_questions,
    Granularity, PruneConfig, QueryEmbeddings, VectorIndex,
};
use atomlith::pipeline::{run_pipeline, validate_store, GeneratorConfig, PipelineConfig, ValidationReport};
use atomlith::questions::{generate_corpus_questions, rewrite_queries, QuestionOptions, SyntheticQuestion};
use atomlith::{jsonl, Error, Result};
use clap::{Args, ValueEnum};
use log::info;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorKind {
    /// Deterministic offline stub, no network.
    Stub,
    /// OpenAI-compatible endpoint taken from ATOMLITH_ENDPOINT.
    Http,
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    /// Text generator backing LLM calls.
    #[arg(long, value_enum, default_value = "stub")]
    pub generator: GeneratorKind,
    /// Model name sent to the HTTP endpoint.
    #[arg(long, default_value = "gpt-3.5-turbo")]
    pub model: String,
    /// Distinct question templates the stub cycles through.
    #[arg(long, default_value_t = 3)]
    pub question_variants: u32,
}

impl GeneratorArgs {
    fn build(&self) -> Result<(Box<dyn Generator>, usize)> {
        let config = match self.generator {
            GeneratorKind::Stub => GeneratorConfig::Stub {
                question_variants: self.question_variants,
            },
            GeneratorKind::Http => GeneratorConfig::Http {
                client: ClientConfig::from_env(&self.model)?,
            },
        };
        config.build()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderKind {
    /// Hashed bag-of-words embedder, fully offline.
    Local,
    /// Embeddings endpoint taken from ATOMLITH_ENDPOINT.
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct EmbedderArgs {
    /// Embedding backend.
    #[arg(long, value_enum, default_value = "local")]
    pub embedder: EmbedderKind,
    /// Vector dimensionality.
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    /// Model name for the remote embedder.
    #[arg(long = "embed-model", default_value = "text-embedding-3-small")]
    pub model: String,
    /// Prefix inputs with `query: ` / `passage: ` for the remote embedder.
    #[arg(long)]
    pub e5_prefixes: bool,
}

impl EmbedderArgs {
    fn build(&self) -> Result<Box<dyn Embedder>> {
        Ok(match self.embedder {
            EmbedderKind::Local => Box::new(LocalEmbedder::new(self.dim)?),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(&RemoteEmbedderConfig {
                client: ClientConfig::from_env(&self.model)?,
                dim: self.dim,
                e5_prefixes: self.e5_prefixes,
                batch_size: 32,
            })?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Chunks,
    Atoms,
    Questions,
    Queries,
    Rewrites,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Structured,
    Llm,
}

impl From<ModeArg> for AtomizeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Structured => AtomizeMode::Structured,
            ModeArg::Llm => AtomizeMode::Llm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Chunk,
    Atom,
    Question,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn ingest_squad(input: &Path, seed: u64, out_dir: &Path) -> Result<()> {
    let ingest = corpus::ingest_squad_file(input, seed)?;
    ingest.corpus.write_jsonl(out_dir)?;
    println!(
        "{} queries, {} chunks ({} paragraphs before merging identical contexts) -> {}",
        ingest.corpus.queries().len(),
        ingest.corpus.chunks().len(),
        ingest.raw_contexts,
        out_dir.display()
    );
    Ok(())
}

pub fn ingest_jsonl(chunks: &Path, queries: &Path, out_dir: Option<&Path>) -> Result<()> {
    let corpus = corpus::ingest_jsonl(chunks, queries)?;
    if let Some(dir) = out_dir {
        corpus.write_jsonl(dir)?;
    }
    println!("{} chunks, {} queries", corpus.chunks().len(), corpus.queries().len());
    Ok(())
}

pub fn atomize(mode: ModeArg, chunks: &Path, out: &Path, max_atoms: usize, gen: &GeneratorArgs) -> Result<()> {
    let chunks: Vec<Chunk> = jsonl::read(chunks)?;
    let mode = AtomizeMode::from(mode);
    let (generator, limit) = match mode {
        AtomizeMode::Llm => {
            let (g, l) = gen.build()?;
            (Some(g), l)
        }
        AtomizeMode::Structured => (None, 1),
    };
    let opts = UnstructuredOptions {
        max_atoms,
        ..Default::default()
    };
    let atoms = atomize_corpus(&chunks, mode, generator.as_deref(), &opts, limit)?;
    jsonl::write(out, &atoms)?;
    println!("{} atoms from {} chunks", atoms.len(), chunks.len());
    Ok(())
}

pub fn genq(atoms: &Path, chunks: &Path, budget: u32, temperature: f32, out: &Path, gen: &GeneratorArgs) -> Result<()> {
    let atoms: Vec<Atom> = jsonl::read(atoms)?;
    let chunks: Vec<Chunk> = jsonl::read(chunks)?;
    let (generator, limit) = gen.build()?;
    let opts = QuestionOptions {
        budget,
        temperature,
        ..Default::default()
    };
    let questions = generate_corpus_questions(&atoms, &chunks, generator.as_ref(), &opts, limit)?;
    jsonl::write(out, &questions)?;
    println!("{} questions for {} atoms", questions.len(), atoms.len());
    Ok(())
}

pub fn rewrite_hyde(queries: &Path, out: &Path, gen: &GeneratorArgs) -> Result<()> {
    let queries: Vec<Query> = jsonl::read(queries)?;
    let (generator, limit) = gen.build()?;
    let rewritten = rewrite_queries(&queries, generator.as_ref(), limit)?;
    jsonl::write(out, &rewritten)?;
    println!("{} queries rewritten", rewritten.len());
    Ok(())
}

fn embed_items(target: Target, input: &Path) -> Result<Vec<EmbedItem>> {
    Ok(match target {
        Target::Chunks => jsonl::read::<Chunk>(input)?
            .into_iter()
            .map(|c| EmbedItem::new(c.chunk_id, ItemKind::Chunk, c.text))
            .collect(),
        Target::Atoms => jsonl::read::<Atom>(input)?
            .into_iter()
            .map(|a| EmbedItem::new(a.atom_id, ItemKind::Atom, a.text))
            .collect(),
        Target::Questions => jsonl::read::<SyntheticQuestion>(input)?
            .into_iter()
            .map(|q| EmbedItem::new(q.question_id, ItemKind::Question, q.text))
            .collect(),
        Target::Queries => jsonl::read::<Query>(input)?
            .into_iter()
            .map(|q| EmbedItem::new(q.query_id, ItemKind::Query, q.text))
            .collect(),
        Target::Rewrites => jsonl::read::<Query>(input)?
            .into_iter()
            .map(|q| {
                let text = q
                    .rewrite
                    .ok_or_else(|| Error::Integrity(format!("query {} has no rewrite", q.query_id)))?;
                Ok(EmbedItem::new(q.query_id, ItemKind::Rewrite, text))
            })
            .collect::<Result<_>>()?,
    })
}

pub fn embed(target: Target, args: &EmbedderArgs, input: &Path, out: &Path, cache: Option<&Path>) -> Result<()> {
    let items = embed_items(target, input)?;
    let embedder = args.build()?;
    let mut cache = match cache {
        Some(p) => EmbeddingCache::open(p)?,
        None => EmbeddingCache::in_memory(),
    };
    let records = embed_batch(&items, embedder.as_ref(), &mut cache)?;
    jsonl::write(out, &records)?;
    println!("{} vectors ({}) -> {}", records.len(), embedder.tag(), out.display());
    Ok(())
}

pub struct BuildIndex<'a> {
    pub granularity: GranularityArg,
    pub embeddings: &'a Path,
    pub chunks: Option<&'a Path>,
    pub atoms: Option<&'a Path>,
    pub questions: Option<&'a Path>,
    pub out: &'a Path,
}

fn required<'a>(path: Option<&'a Path>, flag: &str, what: &str) -> Result<&'a Path> {
    path.ok_or_else(|| Error::Config(format!("{what} index needs --{flag}")))
}

pub fn build_index(args: BuildIndex<'_>) -> Result<()> {
    let records: Vec<EmbeddingRecord> = jsonl::read(args.embeddings)?;
    let index = match args.granularity {
        GranularityArg::Chunk => {
            let chunks: Vec<Chunk> = jsonl::read(required(args.chunks, "chunks", "a chunk")?)?;
            build_chunk_index(&records, &chunks)?
        }
        GranularityArg::Atom => {
            let atoms: Vec<Atom> = jsonl::read(required(args.atoms, "atoms", "an atom")?)?;
            build_atom_index(&records, &atoms)?
        }
        GranularityArg::Question => {
            let atoms: Vec<Atom> = jsonl::read(required(args.atoms, "atoms", "a question")?)?;
            let questions: Vec<SyntheticQuestion> =
                jsonl::read(required(args.questions, "questions", "a question")?)?;
            build_question_index(&records, &questions, &atoms)?
        }
    };
    index.save(args.out)?;
    println!("{} index: {} entries over {} chunks", index.granularity(), index.len(), index.chunk_count());
    Ok(())
}

fn load_query_embeddings(paths: &[PathBuf]) -> Result<QueryEmbeddings> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(jsonl::read::<EmbeddingRecord>(p)?);
    }
    Ok(QueryEmbeddings::from_records(&records))
}

pub fn retrieve(
    index: &Path,
    queries: &Path,
    query_embeddings: &[PathBuf],
    k: usize,
    hyde: bool,
    out: Option<&Path>,
) -> Result<()> {
    let index = VectorIndex::load(index)?;
    let queries: Vec<Query> = jsonl::read(queries)?;
    let embeddings = load_query_embeddings(query_embeddings)?;
    let runs = retrieve_run(&index, &queries, &embeddings, k, hyde)?;
    match out {
        Some(path) => {
            jsonl::write(path, &runs)?;
            info!("{} runs -> {}", runs.len(), path.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            for run in &runs {
                let line = serde_json::to_string(run).map_err(|e| Error::Invalid(e.to_string()))?;
                writeln!(stdout, "{line}").map_err(|e| Error::Invalid(e.to_string()))?;
            }
        }
    }
    Ok(())
}

pub fn prune(index: &Path, tau: f64, out: &Path) -> Result<()> {
    let index = VectorIndex::load(index)?;
    let pruned = prune_questions(&index, PruneConfig::new(tau)?)?;
    pruned.save(out)?;
    println!("tau {tau}: kept {} of {} questions", pruned.len(), index.len());
    Ok(())
}

pub fn sample(index: &Path, fraction: f64, seed: u64, out: Option<&Path>) -> Result<()> {
    let index = VectorIndex::load(index)?;
    let sampled = sample_questions(&index, fraction, seed)?;
    if let Some(dir) = out {
        sampled.save(dir)?;
    }
    println!("fraction {fraction}, seed {seed}: kept {} of {} entries", sampled.len(), index.len());
    Ok(())
}

fn index_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub struct Eval<'a> {
    pub corpus_dir: &'a Path,
    pub indices: &'a [PathBuf],
    pub query_embeddings: &'a [PathBuf],
    pub ks: &'a [usize],
    pub ndcg_ks: &'a [usize],
    pub hyde: bool,
    pub dataset: &'a str,
    pub out: &'a Path,
}

pub fn eval(args: Eval<'_>) -> Result<()> {
    let corpus = corpus::load_dir(args.corpus_dir)?;
    let embeddings = load_query_embeddings(args.query_embeddings)?;
    let loaded: Vec<(String, VectorIndex)> = args
        .indices
        .iter()
        .map(|p| Ok((index_label(p), VectorIndex::load(p)?)))
        .collect::<Result<_>>()?;
    let indices: Vec<(String, &VectorIndex)> = loaded.iter().map(|(l, i)| (l.clone(), i)).collect();
    let mut variants = vec![QueryVariant::Text];
    if args.hyde {
        variants.push(QueryVariant::Hyde);
    }
    let rows = run_comparison(&corpus, &indices, &embeddings, &variants, args.ks, args.ndcg_ks)?;
    write_csv_file(args.out, |buf| write_comparison_csv(buf, args.dataset, &rows))?;
    for row in &rows {
        let cells: Vec<String> = row
            .report
            .r_at
            .iter()
            .map(|(k, v)| format!("R@{k} {v:.3}"))
            .chain(row.report.ndcg_at.iter().map(|(k, v)| format!("nDCG@{k} {v:.3}")))
            .collect();
        println!("{}: {}", row.report.run_label, cells.join(", "));
    }
    Ok(())
}

pub struct EvalSweep<'a> {
    pub question_index: &'a Path,
    pub corpus_dir: &'a Path,
    pub query_embeddings: &'a [PathBuf],
    pub spec: SweepSpec,
    pub out: &'a Path,
}

pub fn eval_sweep(args: EvalSweep<'_>) -> Result<()> {
    let index = VectorIndex::load(args.question_index)?;
    if index.granularity() != Granularity::Question {
        return Err(Error::Config(format!("{} is not a question index", args.question_index.display())));
    }
    let corpus = corpus::load_dir(args.corpus_dir)?;
    let embeddings = load_query_embeddings(args.query_embeddings)?;
    let curves = efficiency_sweep(&index, &corpus, &embeddings, &args.spec)?;
    write_csv_file(args.out, |buf| write_curves_csv(buf, &curves))?;
    for c in &curves {
        println!("{} {}: nAUC {:.4} over {} points", c.strategy, c.metric, c.nauc, c.points.len());
    }
    Ok(())
}

pub fn run(config: &Path) -> Result<()> {
    // An unreadable or malformed config file is a config error, whatever the cause.
    let config = PipelineConfig::from_file(config).map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    let summary = run_pipeline(&config)?;
    for stage in &summary.manifest.stages {
        println!("{:<9} {:<8} {} ms", stage.name, stage.status, stage.elapsed_ms);
    }
    println!("artifacts in {}", summary.output_dir.display());
    Ok(())
}

pub fn validate(dir: &Path, json: bool) -> Result<ValidationReport> {
    let report = validate_store(dir)?;
    if json {
        print_json(&report)?;
    } else {
        for f in &report.findings {
            println!("{f}");
        }
        println!("{} files checked, {} findings", report.files_checked, report.findings.len());
    }
    Ok(report)
}

pub fn stats(corpus_dir: &Path) -> Result<()> {
    let corpus = corpus::load_dir(corpus_dir)?;
    let report = corpus_stats(&corpus)?;
    let mut per_source: HashMap<&str, usize> = HashMap::new();
    for c in corpus.chunks() {
        *per_source.entry(c.source.as_deref().unwrap_or("-")).or_default() += 1;
    }
    println!("total chunks         {}", report.total_chunks);
    println!("total queries        {}", report.total_queries);
    println!("queries per chunk    {}", report.queries_per_chunk);
    println!("words per query      {}", report.words_per_query);
    println!("words per chunk      {}", report.words_per_chunk);
    println!("sentences per chunk  {}", report.sentences_per_chunk);
    let mut sources: Vec<_> = per_source.into_iter().collect();
    sources.sort();
    for (source, n) in sources {
        println!("source {source:<13} {n}");
    }
    Ok(())
}
