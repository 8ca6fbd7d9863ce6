//! Retrieval metrics and the comparison / efficiency sweeps built on them.
//!
//! With a single relevant chunk per query:
//!
//! ```text
//! R@K    = |{q : rank(gold_q) <= K}| / |Q|
//! nDCG@K = mean_q [rank(gold_q) <= K] / log2(rank(gold_q) + 1)
//! nAUC   = trapezoid area of (x, y) points / (x_max - x_min)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::index::{retrieve_run, sample_questions, sweep_tau, QueryEmbeddings, RankedChunks, VectorIndex};

fn gold_ranks(
    runs: &[RankedChunks],
    gold: &HashMap<String, String>,
    k: usize,
) -> Result<Vec<Option<usize>>> {
    if runs.is_empty() {
        return Err(Error::Invalid("no runs to evaluate".into()));
    }
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    let missing: Vec<String> = runs
        .iter()
        .filter(|r| !gold.contains_key(&r.query_id))
        .map(|r| r.query_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGold(missing));
    }
    if let Some(r) = runs.iter().find(|r| r.k < k) {
        return Err(Error::Invalid(format!(
            "cutoff {k} exceeds the {} chunks retrieved for {}",
            r.k, r.query_id
        )));
    }
    Ok(runs
        .iter()
        .map(|r| r.rank_of(&gold[&r.query_id]).filter(|&rank| rank <= k))
        .collect())
}

/// Fraction of queries whose gold chunk is among the first `k` retrieved.
pub fn recall_at_k(runs: &[RankedChunks], gold: &HashMap<String, String>, k: usize) -> Result<f64> {
    let ranks = gold_ranks(runs, gold, k)?;
    Ok(ranks.iter().filter(|r| r.is_some()).count() as f64 / ranks.len() as f64)
}

/// Binary-relevance nDCG with one relevant chunk (ideal DCG = 1).
pub fn ndcg_at_k(runs: &[RankedChunks], gold: &HashMap<String, String>, k: usize) -> Result<f64> {
    let ranks = gold_ranks(runs, gold, k)?;
    let total: f64 = ranks
        .iter()
        .map(|r| r.map_or(0.0, |rank| 1.0 / ((rank + 1) as f64).log2()))
        .sum();
    Ok(total / ranks.len() as f64)
}

/// Trapezoidal area under `points` with x rescaled to `[0, 1]` over the observed range.
pub fn nauc(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Invalid("nAUC needs at least two points".into()));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Invalid("curve x values must be strictly increasing".into()));
    }
    let span = points[points.len() - 1].0 - points[0].0;
    let area: f64 = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    // The mean value lies within [min y, max y]; clamp away rounding drift.
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    Ok((area / span).clamp(lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_label: String,
    pub r_at: BTreeMap<usize, f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub num_queries: usize,
}

impl MetricReport {
    pub fn evaluate(
        run_label: impl Into<String>,
        runs: &[RankedChunks],
        gold: &HashMap<String, String>,
        ks: &[usize],
        ndcg_ks: &[usize],
    ) -> Result<MetricReport> {
        let mut r_at = BTreeMap::new();
        for &k in ks {
            r_at.insert(k, recall_at_k(runs, gold, k)?);
        }
        let mut ndcg_at = BTreeMap::new();
        for &k in ndcg_ks {
            ndcg_at.insert(k, ndcg_at_k(runs, gold, k)?);
        }
        Ok(MetricReport {
            run_label: run_label.into(),
            r_at,
            ndcg_at,
            num_queries: runs.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryVariant {
    Text,
    Hyde,
}

impl fmt::Display for QueryVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryVariant::Text => "text",
            QueryVariant::Hyde => "hyde",
        })
    }
}

/// One cell group of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub index_label: String,
    pub embedder_tag: String,
    pub variant: QueryVariant,
    pub report: MetricReport,
}

/// Evaluates every (index, query variant) combination.
pub fn run_comparison(
    corpus: &Corpus,
    indices: &[(String, &VectorIndex)],
    embeddings: &QueryEmbeddings,
    variants: &[QueryVariant],
    ks: &[usize],
    ndcg_ks: &[usize],
) -> Result<Vec<ComparisonRow>> {
    let k_max = ks
        .iter()
        .chain(ndcg_ks)
        .copied()
        .max()
        .ok_or_else(|| Error::Invalid("no cutoffs requested".into()))?;
    let gold = corpus.gold();
    let mut rows = Vec::new();
    for (label, index) in indices {
        for source in [&embeddings.text, &embeddings.rewrite] {
            if let Some(v) = source.values().next() {
                if v.dim() != index.dim() {
                    return Err(Error::DimMismatch {
                        expected: index.dim(),
                        actual: v.dim(),
                    });
                }
            }
        }
        for &variant in variants {
            let runs = retrieve_run(
                index,
                corpus.queries(),
                embeddings,
                k_max,
                variant == QueryVariant::Hyde,
            )?;
            rows.push(ComparisonRow {
                index_label: label.clone(),
                embedder_tag: index.embedder_tag().to_string(),
                variant,
                report: MetricReport::evaluate(format!("{label}/{variant}"), &runs, &gold, ks, ndcg_ks)?,
            });
        }
    }
    Ok(rows)
}

/// Writes `dataset,embedder_tag,granularity,query_variant,metric,value` rows.
pub fn write_comparison_csv<W: Write>(out: W, dataset: &str, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    w.write_record(["dataset", "embedder_tag", "granularity", "query_variant", "metric", "value"])
        .map_err(csv_err)?;
    for row in rows {
        let metrics = row
            .report
            .r_at
            .iter()
            .map(|(k, v)| (format!("R@{k}"), *v))
            .chain(row.report.ndcg_at.iter().map(|(k, v)| (format!("nDCG@{k}"), *v)));
        for (metric, value) in metrics {
            w.write_record([
                dataset,
                &row.embedder_tag,
                &row.index_label,
                &row.variant.to_string(),
                &metric,
                &value.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Invalid(format!("csv: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Pruned,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Pruned => "pruned",
        })
    }
}

/// Recall as a function of the fraction of questions retained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyCurve {
    pub strategy: Strategy,
    pub metric: String,
    pub points: Vec<(f64, f64)>,
    pub nauc: f64,
}

impl EfficiencyCurve {
    pub fn new(strategy: Strategy, metric: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.iter().any(|&(x, y)| !(x > 0.0 && x <= 1.0) || !(0.0..=1.0).contains(&y)) {
            return Err(Error::Invalid("curve points outside (0,1] x [0,1]".into()));
        }
        let nauc = if points.len() >= 2 {
            nauc(&points)?
        } else if let Some(&(_, y)) = points.first() {
            y
        } else {
            return Err(Error::Invalid("empty curve".into()));
        };
        Ok(EfficiencyCurve {
            strategy,
            metric: metric.into(),
            points,
            nauc,
        })
    }

    pub fn value_at(&self, fraction: f64) -> Option<f64> {
        self.points.iter().find(|(x, _)| *x == fraction).map(|p| p.1)
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub taus: Vec<f64>,
    pub ks: Vec<usize>,
}

fn recalls(
    index: &VectorIndex,
    corpus: &Corpus,
    embeddings: &QueryEmbeddings,
    gold: &HashMap<String, String>,
    ks: &[usize],
) -> Result<Vec<f64>> {
    let k_max = *ks.iter().max().expect("ks checked non-empty");
    let runs = retrieve_run(index, corpus.queries(), embeddings, k_max, false)?;
    ks.iter().map(|&k| recall_at_k(&runs, gold, k)).collect()
}

/// Merges points sharing an x value (they come from identical question sets).
fn dedup_sorted(mut points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.dedup_by(|b, a| a.0 == b.0);
    points
}

/// Random-subsampling and diversity-pruned recall curves for each R@K.
///
/// Random points average recall over `seeds`; the x coordinate of every
/// point is retained / total questions. The pruned sweep always includes
/// tau = 0 so both strategies share the full-set point.
pub fn efficiency_sweep(
    question_index: &VectorIndex,
    corpus: &Corpus,
    embeddings: &QueryEmbeddings,
    spec: &SweepSpec,
) -> Result<Vec<EfficiencyCurve>> {
    if question_index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if spec.seeds.is_empty() {
        return Err(Error::Invalid("at least one seed required".into()));
    }
    if spec.ks.is_empty() || spec.ks.contains(&0) {
        return Err(Error::Invalid("ks must be non-empty and positive".into()));
    }
    if spec.fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("fractions must be strictly ascending".into()));
    }
    let gold = corpus.gold();
    let total = question_index.len() as f64;

    let mut random: Vec<Vec<(f64, f64)>> = vec![Vec::new(); spec.ks.len()];
    for &fraction in &spec.fractions {
        let mut sums = vec![0.0; spec.ks.len()];
        let mut retained = 0;
        for &seed in &spec.seeds {
            let sampled = sample_questions(question_index, fraction, seed)?;
            retained = sampled.len();
            for (s, r) in sums.iter_mut().zip(recalls(&sampled, corpus, embeddings, &gold, &spec.ks)?) {
                *s += r;
            }
        }
        let x = retained as f64 / total;
        for (curve, s) in random.iter_mut().zip(sums) {
            curve.push((x, s / spec.seeds.len() as f64));
        }
    }

    let mut taus = spec.taus.clone();
    if !taus.contains(&0.0) {
        taus.insert(0, 0.0);
    }
    taus.sort_by(f64::total_cmp);
    let mut pruned: Vec<Vec<(f64, f64)>> = vec![Vec::new(); spec.ks.len()];
    for (_, count, index) in sweep_tau(question_index, &taus)? {
        let x = count as f64 / total;
        for (curve, r) in pruned.iter_mut().zip(recalls(&index, corpus, embeddings, &gold, &spec.ks)?) {
            curve.push((x, r));
        }
    }

    let mut curves = Vec::new();
    for (i, &k) in spec.ks.iter().enumerate() {
        let metric = format!("R@{k}");
        curves.push(EfficiencyCurve::new(
            Strategy::Random,
            metric.clone(),
            dedup_sorted(std::mem::take(&mut random[i])),
        )?);
        curves.push(EfficiencyCurve::new(
            Strategy::Pruned,
            metric,
            dedup_sorted(std::mem::take(&mut pruned[i])),
        )?);
    }
    Ok(curves)
}

/// Writes `strategy,metric,fraction,value,nauc` rows.
pub fn write_curves_csv<W: Write>(out: W, curves: &[EfficiencyCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    w.write_record(["strategy", "metric", "fraction", "value", "nauc"])
        .map_err(csv_err)?;
    for c in curves {
        for (x, y) in &c.points {
            w.write_record([
                c.strategy.to_string(),
                c.metric.clone(),
                x.to_string(),
                y.to_string(),
                c.nauc.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Invalid(format!("csv: {e}")))
}

pub fn write_csv_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
