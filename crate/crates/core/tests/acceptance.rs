//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the console.

mod common;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use atomlith::atomizer::{atomize_structured, Atom};
use atomlith::corpus::{ingest_squad_file, Chunk, Corpus, Query};
use atomlith::embedding::{embed_batch, EmbedItem, EmbeddingCache, EmbeddingRecord, ItemKind, LocalEmbedder};
use atomlith::eval::{efficiency_sweep, nauc, ndcg_at_k, recall_at_k, Strategy, SweepSpec};
use atomlith::generation::stub::{OfflineStub, TemplateQuestionStub};
use atomlith::generation::{parse_prompt, GenError, GenerationRequest, Generator, PromptTask};
use atomlith::index::{
    build_atom_index, build_chunk_index, build_question_index, prune_questions, retrieve_run, sweep_tau,
    PruneConfig, QueryEmbeddings, RankedChunks, VectorIndex,
};
use atomlith::pipeline::{run_pipeline, validate_store, FindingKind, GeneratorConfig, Layout, StageStatus};
use atomlith::questions::{generate_corpus_questions, QuestionOptions, SyntheticQuestion};
use atomlith::jsonl;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gen, oracle, snapshot, tiny_config};

const SEARCH_INSTANCES: usize = 200;
const SEARCH_MAX_ENTRIES: usize = 500;
const SEARCH_DIM: usize = 32;
const SEARCH_BUDGET: Duration = Duration::from_secs(10);
const METRIC_TOL: f64 = 1e-9;
const PRUNE_INSTANCES: usize = 50;
const PIPELINE_BUDGET: Duration = Duration::from_secs(30);
const MIN_R1_GAIN: f64 = 0.15;
const SQUAD_QUERIES: usize = 10_570;
const SQUAD_REFERENCE_CHUNKS: usize = 2_067;
const SQUAD_BUDGET: Duration = Duration::from_secs(20);
const STORAGE_FACTOR: usize = 15;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

fn search_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
    let mut queries = 0;
    for instance in 0..SEARCH_INSTANCES {
        let n = rng.random_range(1..=SEARCH_MAX_ENTRIES);
        let chunks = rng.random_range(1..=60);
        let index = gen::question_index(&mut rng, n, chunks, SEARCH_DIM);
        for _ in 0..5 {
            let query = if rng.random_bool(0.3) {
                let i = rng.random_range(0..index.len());
                index.entries()[i].vector.clone()
            } else {
                gen::vector(&mut rng, SEARCH_DIM)
            };
            let k = rng.random_range(1..=25);
            let got = index.search("q", &query, k).map_err(|e| e.to_string())?;
            let want = oracle::search(&index, &query, k);
            ensure!(got.ranked == want, "instance {instance}: search differs from brute force (k={k}, n={n})");
            queries += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < SEARCH_BUDGET, "took {elapsed:?}, budget {SEARCH_BUDGET:?}");
    Ok(format!("{SEARCH_INSTANCES} instances, {queries} queries identical to oracle in {elapsed:.2?}"))
}

fn metric_closed_forms() -> Outcome {
    // Gold ranks of the ten queries; None = not in the top 10.
    let ranks = [Some(1), Some(1), Some(2), Some(3), Some(5), Some(6), Some(10), None, Some(2), Some(4)];
    let mut runs = Vec::new();
    let mut gold = HashMap::new();
    for (i, rank) in ranks.iter().enumerate() {
        let q = format!("q{i}");
        let ranked = (1..=10)
            .map(|r| (if Some(r) == *rank { q.clone() + "-gold" } else { format!("{q}-x{r}") }, r as f64 / 10.0))
            .collect();
        gold.insert(q.clone(), q.clone() + "-gold");
        runs.push(RankedChunks { query_id: q, k: 10, ranked });
    }
    let inv = |r: f64| 1.0 / (r + 1.0).log2();
    // R@K = hits / 10, nDCG@K = sum over hits of 1/log2(rank+1), divided by 10.
    let expected = [
        (1, 0.2, 0.2),
        (2, 0.4, (2.0 + 2.0 * inv(2.0)) / 10.0),
        (3, 0.5, (2.0 + 2.0 * inv(2.0) + inv(3.0)) / 10.0),
        (5, 0.7, (2.0 + 2.0 * inv(2.0) + inv(3.0) + inv(4.0) + inv(5.0)) / 10.0),
        (10, 0.9, (2.0 + 2.0 * inv(2.0) + inv(3.0) + inv(4.0) + inv(5.0) + inv(6.0) + inv(10.0)) / 10.0),
    ];
    let hand_ndcg = [0.2, 0.3261859507142916, 0.37618595071429156, 0.457938887245085, 0.5224660885876761];
    for ((k, r, n), hand) in expected.iter().zip(hand_ndcg) {
        let got_r = recall_at_k(&runs, &gold, *k).map_err(|e| e.to_string())?;
        let got_n = ndcg_at_k(&runs, &gold, *k).map_err(|e| e.to_string())?;
        ensure!((got_r - r).abs() <= METRIC_TOL, "R@{k} = {got_r}, expected {r}");
        ensure!((got_n - n).abs() <= METRIC_TOL, "nDCG@{k} = {got_n}, expected {n}");
        ensure!((got_n - hand).abs() <= METRIC_TOL, "nDCG@{k} = {got_n}, hand value {hand}");
    }
    let constant = nauc(&[(0.1, 0.7), (0.4, 0.7), (0.55, 0.7), (1.0, 0.7)]).map_err(|e| e.to_string())?;
    let triangle = nauc(&[(0.0, 0.0), (1.0, 1.0)]).map_err(|e| e.to_string())?;
    ensure!(constant == 0.7, "constant nAUC = {constant}");
    ensure!(triangle == 0.5, "triangle nAUC = {triangle}");
    Ok(format!("R@K and nDCG@K for K in {{1,2,3,5,10}} within {METRIC_TOL:e}; nAUC 0.7 / 0.5 exact"))
}

fn saved_bytes(index: &VectorIndex) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    index.save(dir.path()).unwrap();
    let mut out = std::fs::read(dir.path().join("manifest.json")).unwrap();
    out.extend(std::fs::read(dir.path().join("embeddings.jsonl")).unwrap());
    out
}

fn pruning_contract() -> Outcome {
    let taus: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0003);
    let mut total_pairs = 0usize;
    for instance in 0..PRUNE_INSTANCES {
        let n = rng.random_range(20..=400);
        let chunks = rng.random_range(1..=30);
        let index = gen::question_index(&mut rng, n, chunks, 8);
        let sweep = sweep_tau(&index, &taus).map_err(|e| e.to_string())?;
        let mut last = usize::MAX;
        for (tau, count, pruned) in &sweep {
            ensure!(*count <= last, "instance {instance}: count rose at tau {tau}");
            last = *count;
            ensure!(
                pruned.chunk_count() == index.chunk_count(),
                "instance {instance}: a chunk lost every question at tau {tau}"
            );
            for group in pruned.chunk_groups() {
                for (a, &i) in group.iter().enumerate() {
                    for &j in &group[a + 1..] {
                        let d = oracle::distance(&pruned.entries()[i].vector, &pruned.entries()[j].vector);
                        ensure!(d >= *tau, "instance {instance}: surviving pair at {d} < tau {tau}");
                        total_pairs += 1;
                    }
                }
            }
            let again = prune_questions(&index, PruneConfig::new(*tau).unwrap()).map_err(|e| e.to_string())?;
            ensure!(
                saved_bytes(&again) == saved_bytes(pruned),
                "instance {instance}: rerun at tau {tau} not byte-identical"
            );
        }
    }
    Ok(format!(
        "{PRUNE_INSTANCES} indices x 9 thresholds: tau-packing ({total_pairs} pairs), monotone counts, every chunk kept, byte-identical reruns"
    ))
}

fn pipeline_hermeticity() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut slowest = Duration::ZERO;
    for dir in [&a, &b] {
        let started = Instant::now();
        let summary = run_pipeline(&tiny_config(dir.path())).map_err(|e| e.to_string())?;
        slowest = slowest.max(started.elapsed());
        ensure!(
            summary.manifest.stages.iter().all(|s| s.status == StageStatus::Ok),
            "not every stage ran"
        );
    }
    ensure!(slowest < PIPELINE_BUDGET, "a run took {slowest:?}");
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    ensure!(sa.keys().eq(sb.keys()), "artifact sets differ");
    for (name, bytes) in &sa {
        ensure!(&sb[name] == bytes, "{name} differs between runs");
    }
    let report = std::fs::read_to_string(Layout::new(a.path()).report()).unwrap();
    ensure!(report.lines().count() > 1, "empty report");
    Ok(format!("{} artifacts byte-identical across two runs; slowest run {slowest:.2?}", sa.len()))
}

/// Fifty chunks of six sentences. Each sentence has two words of its own
/// and six drawn from a shared 60-word vocabulary; each query rewords the
/// stub question of one sentence.
struct ParaphraseFixture {
    corpus: Corpus,
    atoms: Vec<Atom>,
}

fn word_pool(rng: &mut ChaCha8Rng, n: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(5..=9);
        let w: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn paraphrase_fixture(seed: u64) -> ParaphraseFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = HashSet::new();
    let common = word_pool(&mut rng, 60, &mut taken);
    let mut chunks = Vec::new();
    let mut queries = Vec::new();
    for c in 0..50 {
        let own = word_pool(&mut rng, 12, &mut taken);
        let sentences: Vec<Vec<String>> = (0..6)
            .map(|s| {
                let mut words: Vec<String> = (0..6).map(|_| common[rng.random_range(0..common.len())].clone()).collect();
                words.insert(0, own[2 * s].clone());
                words.insert(3, own[2 * s + 1].clone());
                words
            })
            .collect();
        let text = sentences
            .iter()
            .map(|w| format!("{}.", capitalize(&w.join(" "))))
            .collect::<Vec<_>>()
            .join(" ");
        let chunk_id = format!("c{c:02}");
        let target = &sentences[rng.random_range(0..6)];
        let mut head: Vec<String> = target[..6].to_vec();
        head.reverse();
        queries.push(Query {
            query_id: format!("q{c:02}"),
            text: format!("What does the text tell us about {}?", head.join(" ")),
            gold_chunk_id: chunk_id.clone(),
            rewrite: None,
        });
        chunks.push(Chunk { chunk_id, text, source: None });
    }
    let corpus = Corpus::new(chunks, queries).expect("fixture corpus");
    let atoms = corpus.chunks().iter().flat_map(atomize_structured).collect();
    ParaphraseFixture { corpus, atoms }
}

fn embed(items: Vec<EmbedItem>, embedder: &LocalEmbedder) -> Vec<EmbeddingRecord> {
    embed_batch(&items, embedder, &mut EmbeddingCache::in_memory()).expect("embedding")
}

struct Indexed {
    chunk: VectorIndex,
    atom: VectorIndex,
    question: VectorIndex,
    queries: QueryEmbeddings,
}

fn index_fixture(fx: &ParaphraseFixture, questions: &[SyntheticQuestion]) -> Indexed {
    let embedder = LocalEmbedder::new(256).unwrap();
    let chunk_records = embed(
        fx.corpus.chunks().iter().map(|c| EmbedItem::new(&c.chunk_id, ItemKind::Chunk, &c.text)).collect(),
        &embedder,
    );
    let atom_records = embed(
        fx.atoms.iter().map(|a| EmbedItem::new(&a.atom_id, ItemKind::Atom, &a.text)).collect(),
        &embedder,
    );
    let question_records = embed(
        questions.iter().map(|q| EmbedItem::new(&q.question_id, ItemKind::Question, &q.text)).collect(),
        &embedder,
    );
    let query_records = embed(
        fx.corpus.queries().iter().map(|q| EmbedItem::new(&q.query_id, ItemKind::Query, &q.text)).collect(),
        &embedder,
    );
    Indexed {
        chunk: build_chunk_index(&chunk_records, fx.corpus.chunks()).unwrap(),
        atom: build_atom_index(&atom_records, &fx.atoms).unwrap(),
        question: build_question_index(&question_records, questions, &fx.atoms).unwrap(),
        queries: QueryEmbeddings::from_records(&query_records),
    }
}

fn r_at_1(index: &VectorIndex, corpus: &Corpus, queries: &QueryEmbeddings) -> f64 {
    let runs = retrieve_run(index, corpus.queries(), queries, 1, false).unwrap();
    recall_at_k(&runs, &corpus.gold(), 1).unwrap()
}

fn question_granularity_gain() -> Outcome {
    let fx = paraphrase_fixture(0xACCE_0005);
    let stub = OfflineStub::default();
    let questions = generate_corpus_questions(&fx.atoms, fx.corpus.chunks(), &stub, &QuestionOptions::default(), 4)
        .map_err(|e| e.to_string())?;
    let ix = index_fixture(&fx, &questions);
    let chunk = r_at_1(&ix.chunk, &fx.corpus, &ix.queries);
    let atom = r_at_1(&ix.atom, &fx.corpus, &ix.queries);
    let question = r_at_1(&ix.question, &fx.corpus, &ix.queries);
    let detail = format!("R@1 chunk {chunk:.2}, atom {atom:.2}, question {question:.2}");
    ensure!(question - chunk >= MIN_R1_GAIN, "{detail}: gain {:.2} below {MIN_R1_GAIN}", question - chunk);
    Ok(detail)
}

/// Ten questions per atom: five near-identical wordings of the head
/// question, then five over shifted windows of the sentence.
struct MixedQuestionStub;

impl Generator for MixedQuestionStub {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenError> {
        let Some((PromptTask::Question, slots)) = parse_prompt(&request.prompt) else {
            return Err(GenError::Unavailable("question prompts only".into()));
        };
        let atom = slots.iter().find(|(k, _)| *k == "atom").map(|(_, v)| *v).unwrap_or_default();
        let s = request.sample_index;
        if s < 5 {
            return Ok(TemplateQuestionStub { variants: 5 }.question(atom, s));
        }
        let words: Vec<&str> = atom.split_whitespace().map(|w| w.trim_end_matches('.')).collect();
        let shift = (s as usize - 4) % words.len();
        let window: Vec<&str> = words.iter().cycle().skip(shift).take(6).copied().collect();
        Ok(format!("Which detail involves {}?", window.join(" ")))
    }
}

fn efficiency_envelope() -> Outcome {
    let fx = paraphrase_fixture(0xACCE_0005);
    let opts = QuestionOptions {
        budget: 10,
        ..Default::default()
    };
    let questions = generate_corpus_questions(&fx.atoms, fx.corpus.chunks(), &MixedQuestionStub, &opts, 4)
        .map_err(|e| e.to_string())?;
    ensure!(questions.len() == 10 * fx.atoms.len(), "expected 10 questions per atom, got {}", questions.len());
    let ix = index_fixture(&fx, &questions);
    let spec = SweepSpec {
        fractions: (1..=10).map(|i| i as f64 / 10.0).collect(),
        seeds: vec![1, 2, 3],
        taus: (0..=20).map(|i| i as f64 * 0.05).collect(),
        ks: vec![1],
    };
    let curves = efficiency_sweep(&ix.question, &fx.corpus, &ix.queries, &spec).map_err(|e| e.to_string())?;
    let find = |s: Strategy| curves.iter().find(|c| c.strategy == s && c.metric == "R@1").unwrap();
    let (random, pruned) = (find(Strategy::Random), find(Strategy::Pruned));
    let full = r_at_1(&ix.question, &fx.corpus, &ix.queries);
    let (ra, pa) = (random.value_at(1.0), pruned.value_at(1.0));
    ensure!(ra == Some(full) && pa == Some(full), "curves at 1.0: random {ra:?}, pruned {pa:?}, full {full}");
    let detail = format!(
        "R@1 nAUC pruned {:.4} vs random {:.4} (3 seeds); both {full:.2} at fraction 1.0",
        pruned.nauc, random.nauc
    );
    ensure!(pruned.nauc >= random.nauc, "{detail}");
    Ok(detail)
}

fn squad_path() -> PathBuf {
    std::env::var_os("ATOMLITH_SQUAD_DEV")
        .map(PathBuf::from)
        .unwrap_or_else(|| common::fixtures().join("squad").join("dev-v1.1.json"))
}

fn squad_restructuring() -> Outcome {
    let path = squad_path();
    ensure!(
        path.is_file(),
        "SQuAD v1.1 dev set not found at {} (set ATOMLITH_SQUAD_DEV)",
        path.display()
    );
    let started = Instant::now();
    let ingest = ingest_squad_file(&path, 0).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let chunks = ingest.corpus.chunks().len();
    let queries = ingest.corpus.queries().len();
    let detail = format!(
        "{queries} queries, {chunks} chunks from {} contexts (reference {SQUAD_REFERENCE_CHUNKS}, delta {}) in {elapsed:.2?}",
        ingest.raw_contexts,
        chunks as i64 - SQUAD_REFERENCE_CHUNKS as i64
    );
    ensure!(queries == SQUAD_QUERIES, "{detail}: expected {SQUAD_QUERIES} queries");
    ensure!(elapsed < SQUAD_BUDGET, "{detail}: over {SQUAD_BUDGET:?}");
    Ok(detail)
}

fn storage_bound() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    // More distinct templates than calls, so every call yields a new question.
    config.generator = GeneratorConfig::Stub { question_variants: 40 };
    run_pipeline(&config).map_err(|e| e.to_string())?;
    let report = validate_store(dir.path()).map_err(|e| e.to_string())?;
    ensure!(report.is_clean(), "findings on a generated store: {:?}", report.findings);
    let l = Layout::new(dir.path());
    let mut counts = Vec::new();
    for mode in &config.atomize.modes {
        let atoms: Vec<Atom> = jsonl::read(&l.atoms(mode)).unwrap();
        let questions: Vec<SyntheticQuestion> = jsonl::read(&l.questions(mode)).unwrap();
        ensure!(
            questions.len() <= STORAGE_FACTOR * atoms.len(),
            "{mode}: {} questions for {} atoms",
            questions.len(),
            atoms.len()
        );
        counts.push(format!("{mode} {}/{}", questions.len(), STORAGE_FACTOR * atoms.len()));
    }

    let path = l.questions(&config.atomize.modes[0]);
    let mut questions: Vec<SyntheticQuestion> = jsonl::read(&path).unwrap();
    let extra = SyntheticQuestion {
        question_id: format!("{}-extra", questions[0].atom_id),
        index: 99,
        text: "One question too many?".into(),
        ..questions[0].clone()
    };
    questions.push(extra);
    jsonl::write(&path, &questions).unwrap();
    let tampered = validate_store(dir.path()).map_err(|e| e.to_string())?;
    let atom = &questions[0].atom_id;
    ensure!(
        tampered
            .findings
            .iter()
            .any(|f| f.kind == FindingKind::StorageBound && f.message.contains(atom.as_str())),
        "over-budget store not flagged: {:?}",
        tampered.findings
    );
    Ok(format!("questions/bound: {}; an over-budget atom is flagged", counts.join(", ")))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("search equals brute-force oracle", search_oracle_equivalence),
        ("metric closed forms", metric_closed_forms),
        ("pruning contract", pruning_contract),
        ("pipeline hermeticity", pipeline_hermeticity),
        ("question granularity beats chunk granularity", question_granularity_gain),
        ("pruned efficiency curve envelope", efficiency_envelope),
        ("SQuAD restructuring", squad_restructuring),
        ("storage bound", storage_bound),
    ];
    let mut failed = BTreeSet::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL [{}] {name}: {detail}", i + 1);
                failed.insert(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} of {} criteria failed: {failed:?}", failed.len(), criteria.len());
        std::process::exit(1);
    }
    println!("acceptance: all {} criteria passed", criteria.len());
}
