//! `atomlith`: atomized-corpus retrieval experiments from the command line.
//!
//! Exit codes: 0 ok, 2 config error, 3 stage failure, 4 validation findings.

mod commands;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use atomlith::eval::SweepSpec;
use atomlith::Error;
use clap::{Parser, Subcommand};

use commands::{EmbedderArgs, GeneratorArgs, GranularityArg, ModeArg, Target};
use grid::{parse_f64_grid, parse_u64_list, parse_usize_list};

/// Parsed as one comma- or range-valued argument rather than repeated flags.
type List<T> = Vec<T>;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;
const EXIT_FINDINGS: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "atomlith", version, about = "Atom and synthetic-question retrieval pipeline")]
struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Restructure a SQuAD v1.1 JSON file into chunks.jsonl and queries.jsonl.
    IngestSquad {
        /// SQuAD-format JSON document.
        #[arg(long)]
        input: PathBuf,
        /// Seed for the chunk order shuffle.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory receiving chunks.jsonl and queries.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check a JSONL corpus and optionally rewrite it normalized.
    IngestJsonl {
        /// Chunk records, one JSON object per line.
        #[arg(long)]
        chunks: PathBuf,
        /// Query records with gold_chunk_id.
        #[arg(long)]
        queries: PathBuf,
        /// Write the validated corpus here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Split chunks into atoms.
    Atomize {
        /// Sentence split or generator-produced facts.
        #[arg(long, value_enum, default_value = "structured")]
        mode: ModeArg,
        /// Chunk JSONL.
        #[arg(long)]
        chunks: PathBuf,
        /// Atom JSONL to write.
        #[arg(long)]
        out: PathBuf,
        /// Cap on atoms per chunk in llm mode.
        #[arg(long, default_value_t = 50)]
        max_atoms: usize,
        #[command(flatten)]
        gen: GeneratorArgs,
    },
    /// Generate synthetic questions for every atom.
    Genq {
        /// Atom JSONL.
        #[arg(long)]
        atoms: PathBuf,
        /// Chunk JSONL the atoms came from.
        #[arg(long)]
        chunks: PathBuf,
        /// Generation calls per atom; duplicates are dropped.
        #[arg(long, default_value_t = 15)]
        budget: u32,
        /// Sampling temperature.
        #[arg(long, default_value_t = 1.0)]
        temperature: f32,
        /// Question JSONL to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        gen: GeneratorArgs,
    },
    /// Rewrite queries into hypothetical answers.
    RewriteHyde {
        /// Query JSONL.
        #[arg(long)]
        queries: PathBuf,
        /// Query JSONL with the rewrite field filled.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        gen: GeneratorArgs,
    },
    /// Embed chunks, atoms, questions, queries or rewrites.
    Embed {
        /// Record type stored in --in.
        #[arg(long, value_enum)]
        target: Target,
        #[command(flatten)]
        embedder: EmbedderArgs,
        /// Input JSONL.
        #[arg(long = "in")]
        input: PathBuf,
        /// Embedding record JSONL to write.
        #[arg(long)]
        out: PathBuf,
        /// Persistent embedding cache; in-memory when omitted.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Build a vector index from embedding records.
    BuildIndex {
        /// Granularity of the index entries.
        #[arg(long, value_enum)]
        granularity: GranularityArg,
        /// Embedding record JSONL.
        #[arg(long)]
        embeddings: PathBuf,
        /// Chunk JSONL (chunk indices).
        #[arg(long)]
        chunks: Option<PathBuf>,
        /// Atom JSONL (atom and question indices).
        #[arg(long)]
        atoms: Option<PathBuf>,
        /// Question JSONL (question indices).
        #[arg(long)]
        questions: Option<PathBuf>,
        /// Index directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank chunks for every query.
    Retrieve {
        /// Index directory.
        #[arg(long)]
        index: PathBuf,
        /// Query JSONL.
        #[arg(long)]
        queries: PathBuf,
        /// Query (and rewrite) embedding JSONL; repeatable.
        #[arg(long, required = true)]
        query_embeddings: Vec<PathBuf>,
        /// Distinct chunks per query.
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Search with the rewrite embedding instead of the query text.
        #[arg(long)]
        hyde: bool,
        /// Run JSONL to write; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drop near-duplicate questions within each chunk.
    Prune {
        /// Question index directory.
        #[arg(long)]
        index: PathBuf,
        /// Minimum cosine distance between surviving questions of a chunk.
        #[arg(long, default_value_t = 0.35)]
        tau: f64,
        /// Pruned index directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep a random share of each chunk's entries.
    Sample {
        /// Index directory.
        #[arg(long)]
        index: PathBuf,
        /// Share of entries kept per chunk, in (0, 1].
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        /// Sampling seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Sampled index directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score indices with R@K and nDCG@K into a CSV report.
    Eval {
        /// Directory with chunks.jsonl and queries.jsonl.
        #[arg(long)]
        corpus_dir: PathBuf,
        /// Index directories; the directory name is the row label.
        #[arg(long = "index", required = true)]
        indices: Vec<PathBuf>,
        /// Query (and rewrite) embedding JSONL; repeatable.
        #[arg(long, required = true)]
        query_embeddings: Vec<PathBuf>,
        /// Recall cutoffs, comma separated.
        #[arg(long, default_value = "1,2,5", value_parser = parse_usize_list)]
        ks: List<usize>,
        /// nDCG cutoffs, comma separated.
        #[arg(long, default_value = "10", value_parser = parse_usize_list)]
        ndcg_ks: List<usize>,
        /// Also evaluate rewrite embeddings.
        #[arg(long)]
        hyde: bool,
        /// Dataset column of the report.
        #[arg(long, default_value = "corpus")]
        dataset: String,
        /// CSV report to write.
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
    /// Recall-versus-size curves for random sampling and pruning.
    EvalSweep {
        /// Unpruned question index directory.
        #[arg(long)]
        question_index: PathBuf,
        /// Directory with chunks.jsonl and queries.jsonl.
        #[arg(long)]
        corpus_dir: PathBuf,
        /// Query embedding JSONL; repeatable.
        #[arg(long, required = true)]
        query_embeddings: Vec<PathBuf>,
        /// Sampling fractions: list or start:stop:step.
        #[arg(long, default_value = "0.1:1.0:0.1", value_parser = parse_f64_grid)]
        fractions: List<f64>,
        /// Pruning thresholds: list or start:stop:step.
        #[arg(long, default_value = "0:1.0:0.05", value_parser = parse_f64_grid)]
        taus: List<f64>,
        /// Sampling seeds averaged per fraction.
        #[arg(long, default_value = "1,2,3,4,5", value_parser = parse_u64_list)]
        seeds: List<u64>,
        /// Recall cutoffs, comma separated.
        #[arg(long, default_value = "1,2,5", value_parser = parse_usize_list)]
        ks: List<usize>,
        /// CSV curves to write.
        #[arg(long, default_value = "curves.csv")]
        out: PathBuf,
    },
    /// Run every stage from a TOML config, skipping up-to-date stages.
    Run {
        /// Pipeline config file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Check an artifact directory for dangling references and bound violations.
    Validate {
        /// Artifact directory written by `run`.
        dir: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Summary statistics of a corpus directory.
    Stats {
        /// Directory with chunks.jsonl and queries.jsonl.
        #[arg(long)]
        corpus_dir: PathBuf,
    },
}

fn dispatch(command: Command) -> atomlith::Result<u8> {
    use Command::*;
    match command {
        IngestSquad { input, seed, out_dir } => commands::ingest_squad(&input, seed, &out_dir)?,
        IngestJsonl { chunks, queries, out_dir } => commands::ingest_jsonl(&chunks, &queries, out_dir.as_deref())?,
        Atomize {
            mode,
            chunks,
            out,
            max_atoms,
            gen,
        } => commands::atomize(mode, &chunks, &out, max_atoms, &gen)?,
        Genq {
            atoms,
            chunks,
            budget,
            temperature,
            out,
            gen,
        } => commands::genq(&atoms, &chunks, budget, temperature, &out, &gen)?,
        RewriteHyde { queries, out, gen } => commands::rewrite_hyde(&queries, &out, &gen)?,
        Embed {
            target,
            embedder,
            input,
            out,
            cache,
        } => commands::embed(target, &embedder, &input, &out, cache.as_deref())?,
        BuildIndex {
            granularity,
            embeddings,
            chunks,
            atoms,
            questions,
            out,
        } => commands::build_index(commands::BuildIndex {
            granularity,
            embeddings: &embeddings,
            chunks: chunks.as_deref(),
            atoms: atoms.as_deref(),
            questions: questions.as_deref(),
            out: &out,
        })?,
        Retrieve {
            index,
            queries,
            query_embeddings,
            k,
            hyde,
            out,
        } => commands::retrieve(&index, &queries, &query_embeddings, k, hyde, out.as_deref())?,
        Prune { index, tau, out } => commands::prune(&index, tau, &out)?,
        Sample {
            index,
            fraction,
            seed,
            out,
        } => commands::sample(&index, fraction, seed, out.as_deref())?,
        Eval {
            corpus_dir,
            indices,
            query_embeddings,
            ks,
            ndcg_ks,
            hyde,
            dataset,
            out,
        } => commands::eval(commands::Eval {
            corpus_dir: &corpus_dir,
            indices: &indices,
            query_embeddings: &query_embeddings,
            ks: &ks,
            ndcg_ks: &ndcg_ks,
            hyde,
            dataset: &dataset,
            out: &out,
        })?,
        EvalSweep {
            question_index,
            corpus_dir,
            query_embeddings,
            fractions,
            taus,
            seeds,
            ks,
            out,
        } => commands::eval_sweep(commands::EvalSweep {
            question_index: &question_index,
            corpus_dir: &corpus_dir,
            query_embeddings: &query_embeddings,
            spec: SweepSpec {
                fractions,
                seeds,
                taus,
                ks,
            },
            out: &out,
        })?,
        Run { config } => commands::run(&config)?,
        Validate { dir, json } => {
            let report = commands::validate(&dir, json)?;
            if !report.is_clean() {
                return Ok(EXIT_FINDINGS);
            }
        }
        Stats { corpus_dir } => commands::stats(&corpus_dir)?,
    }
    Ok(0)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_STAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
