use atomlith::corpus::{Chunk, Corpus, Query};
use atomlith::embedding::{embed_batch, EmbedItem, EmbeddingCache, ItemKind, LocalEmbedder};
use atomlith::generation::stub::TableStub;
use atomlith::generation::{render_prompt, PromptTask};
use atomlith::index::{build_chunk_index, cosine_distance, retrieve_run, QueryEmbeddings};
use atomlith::questions::rewrite_queries;

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

fn embed_queries(queries: &[Query], embedder: &LocalEmbedder) -> QueryEmbeddings {
    let mut items: Vec<EmbedItem> = queries
        .iter()
        .map(|q| EmbedItem::new(&q.query_id, ItemKind::Query, &q.text))
        .collect();
    let rewrites: Vec<EmbedItem> = queries
        .iter()
        .filter_map(|q| q.rewrite.as_ref().map(|r| EmbedItem::new(format!("{}#r", q.query_id), ItemKind::Rewrite, r)))
        .collect();
    items.extend(rewrites);
    let mut records = embed_batch(&items, embedder, &mut EmbeddingCache::in_memory()).unwrap();
    for r in &mut records {
        if let Some(id) = r.item_id.strip_suffix("#r") {
            r.item_id = id.to_string();
        }
    }
    QueryEmbeddings::from_records(&records)
}

#[test]
fn hyde_rewrite_sharing_gold_tokens_improves_rank() {
    let corpus = Corpus::new(
        vec![
            chunk("gold", "Marlowe is the capital city of Freedonia and seat of its parliament."),
            chunk("decoy", "Which place hosts the annual regatta is a favourite quiz question."),
            chunk("other", "Copper wire carries current between the two terminals."),
        ],
        vec![query("q", "Which place hosts the national assembly?", "gold")],
    )
    .unwrap();
    let prompt = render_prompt(PromptTask::Rewrite, &[("query", "Which place hosts the national assembly?")]).unwrap();
    let stub = TableStub::new([(prompt, "The capital city Marlowe is the seat of parliament.\nIgnored line.")]);
    let rewritten = rewrite_queries(corpus.queries(), &stub, 1).unwrap();
    assert_eq!(
        rewritten[0].rewrite.as_deref(),
        Some("The capital city Marlowe is the seat of parliament.")
    );

    let embedder = LocalEmbedder::new(256).unwrap();
    let chunk_items: Vec<EmbedItem> = corpus
        .chunks()
        .iter()
        .map(|c| EmbedItem::new(&c.chunk_id, ItemKind::Chunk, &c.text))
        .collect();
    let chunk_records = embed_batch(&chunk_items, &embedder, &mut EmbeddingCache::in_memory()).unwrap();
    let index = build_chunk_index(&chunk_records, corpus.chunks()).unwrap();
    let embeddings = embed_queries(&rewritten, &embedder);

    let plain = retrieve_run(&index, &rewritten, &embeddings, 3, false).unwrap();
    let hyde = retrieve_run(&index, &rewritten, &embeddings, 3, true).unwrap();
    let plain_rank = plain[0].rank_of("gold").unwrap();
    let hyde_rank = hyde[0].rank_of("gold").unwrap();
    assert_eq!(hyde_rank, 1);
    assert!(hyde_rank < plain_rank, "plain {plain_rank}, hyde {hyde_rank}");

    // Query text shares no token with the gold chunk: orthogonal unless hashes collide.
    let gold_vec = &chunk_records[0].vector;
    let q_text = embedder.embed_one("Which place hosts the national assembly?").unwrap();
    let q_rewrite = embedder.embed_one(rewritten[0].rewrite.as_deref().unwrap()).unwrap();
    assert!(cosine_distance(&q_rewrite, gold_vec).unwrap() < cosine_distance(&q_text, gold_vec).unwrap());
    assert!((hyde[0].ranked[0].1 - cosine_distance(&q_rewrite, gold_vec).unwrap()).abs() < 1e-12);
}

#[test]
fn rewrite_equal_to_text_gives_identical_ranking() {
    let chunks = vec![
        chunk("a", "rivers flood plains"),
        chunk("b", "bees dance for flowers"),
        chunk("c", "presses print books"),
    ];
    let mut queries = vec![query("q1", "why do bees dance", "b"), query("q2", "what do presses print", "c")];
    for q in &mut queries {
        q.rewrite = Some(q.text.clone());
    }
    let embedder = LocalEmbedder::new(64).unwrap();
    let items: Vec<EmbedItem> = chunks
        .iter()
        .map(|c| EmbedItem::new(&c.chunk_id, ItemKind::Chunk, &c.text))
        .collect();
    let records = embed_batch(&items, &embedder, &mut EmbeddingCache::in_memory()).unwrap();
    let index = build_chunk_index(&records, &chunks).unwrap();
    let embeddings = embed_queries(&queries, &embedder);
    let plain = retrieve_run(&index, &queries, &embeddings, 3, false).unwrap();
    let hyde = retrieve_run(&index, &queries, &embeddings, 3, true).unwrap();
    assert_eq!(plain, hyde);
    for (q, run) in queries.iter().zip(&plain) {
        assert_eq!(run, &index.search(&q.query_id, &embeddings.text[&q.query_id], 3).unwrap());
    }
    assert_eq!(plain[0].rank_of("b"), Some(1));
}
