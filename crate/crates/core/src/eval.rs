//! Ranking metrics over TREC-style runs and qrels, reward histograms, and the
//! data-scaling runner.
//!
//! nDCG uses the `2^grade - 1` gain with a `log2(rank + 1)` discount, the
//! trec-eval convention. Queries that appear in the qrels with no positive
//! judgment are excluded from metric means and counted in the report; queries
//! absent from the qrels altogether are an error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TokenId};
use crate::mining::{retrieve_topk_precomputed, MiningError, Ranking};
use crate::retriever::{
    embed, train_retriever, CorpusEmbeddings, EmbedderParams, RetrieverError, RetrieverTrainConfig,
    TrainExample,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query `{0}` has no judgments in the qrels")]
    MissingJudgments(String),
    #[error("invalid histogram range [{lo}, {hi})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("scaling sizes must be ascending and nonzero")]
    InvalidSizes,
    #[error("scaling size {requested} exceeds the {available} available training pairs")]
    PoolExhausted { requested: usize, available: usize },
    #[error("qrels/run parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Relevance judgments: `(query_id, doc_id) -> grade`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.grades.entry(query_id.to_string()).or_default().insert(doc_id.to_string(), grade);
    }

    pub fn judgments(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades.get(query_id).and_then(|m| m.get(doc_id)).copied().unwrap_or(0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &String> {
        self.grades.keys()
    }

    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }

    /// TREC text format: `qid 0 docid grade`, one judgment per line.
    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (qid, docs) in &self.grades {
            for (docid, grade) in docs {
                let _ = writeln!(out, "{qid} 0 {docid} {grade}");
            }
        }
        out
    }

    pub fn from_trec(text: &str) -> Result<Self, EvalError> {
        let mut qrels = Qrels::new();
        for (line0, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(EvalError::Parse {
                    line: line0 + 1,
                    message: "expected `qid 0 docid grade`".to_string(),
                });
            }
            let grade: u32 = parts[3].parse().map_err(|e| EvalError::Parse {
                line: line0 + 1,
                message: format!("bad grade: {e}"),
            })?;
            qrels.insert(parts[0], parts[2], grade);
        }
        Ok(qrels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        fs::write(path, self.to_trec())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::from_trec(&fs::read_to_string(path)?)
    }
}

/// A tagged set of per-query rankings (TREC run).
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub rankings: Vec<Ranking>,
    pub tag: String,
}

impl RunFile {
    /// TREC format: `qid Q0 docid rank score tag`, ranks contiguous from 1.
    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for ranking in &self.rankings {
            for (i, (doc_id, score)) in ranking.entries.iter().enumerate() {
                let _ = writeln!(out, "{} Q0 {} {} {} {}", ranking.query_id, doc_id, i + 1, score, self.tag);
            }
        }
        out
    }

    pub fn from_trec(text: &str) -> Result<Self, EvalError> {
        let mut per_query: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
        let mut tag = String::new();
        for (line0, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 6 {
                return Err(EvalError::Parse {
                    line: line0 + 1,
                    message: "expected `qid Q0 docid rank score tag`".to_string(),
                });
            }
            let rank: usize = parts[3].parse().map_err(|e| EvalError::Parse {
                line: line0 + 1,
                message: format!("bad rank: {e}"),
            })?;
            let score: f64 = parts[4].parse().map_err(|e| EvalError::Parse {
                line: line0 + 1,
                message: format!("bad score: {e}"),
            })?;
            tag = parts[5].to_string();
            per_query.entry(parts[0].to_string()).or_default().push((rank, parts[2].to_string(), score));
        }
        let mut rankings = Vec::new();
        for (query_id, mut entries) in per_query {
            entries.sort_by_key(|(rank, _, _)| *rank);
            for (i, (rank, _, _)) in entries.iter().enumerate() {
                if *rank != i + 1 {
                    return Err(EvalError::Parse {
                        line: 0,
                        message: format!("ranks for query `{query_id}` are not contiguous from 1"),
                    });
                }
            }
            rankings.push(Ranking {
                query_id,
                entries: entries.into_iter().map(|(_, d, s)| (d, s)).collect(),
            });
        }
        Ok(RunFile { rankings, tag })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        fs::write(path, self.to_trec())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::from_trec(&fs::read_to_string(path)?)
    }
}

/// A metric mean plus the evaluation accounting behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub value: f64,
    /// Queries included in the mean.
    pub evaluated: usize,
    /// Queries present in the qrels but with no positive judgment.
    pub skipped_no_positive: usize,
}

fn metric_mean(
    run: &RunFile,
    qrels: &Qrels,
    per_query: impl Fn(&Ranking, &BTreeMap<String, u32>) -> f64,
) -> Result<MetricReport, EvalError> {
    let mut sum = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for ranking in &run.rankings {
        let judgments = qrels
            .judgments(&ranking.query_id)
            .ok_or_else(|| EvalError::MissingJudgments(ranking.query_id.clone()))?;
        if judgments.values().all(|&g| g == 0) {
            skipped += 1;
            continue;
        }
        sum += per_query(ranking, judgments);
        evaluated += 1;
    }
    let value = if evaluated == 0 { 0.0 } else { sum / evaluated as f64 };
    Ok(MetricReport { value, evaluated, skipped_no_positive: skipped })
}

/// Mean reciprocal rank of the first relevant document within the top `k`.
pub fn mrr_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport, EvalError> {
    metric_mean(run, qrels, |ranking, judgments| {
        for (i, (doc_id, _)) in ranking.entries.iter().take(k).enumerate() {
            if judgments.get(doc_id).copied().unwrap_or(0) >= 1 {
                return 1.0 / (i + 1) as f64;
            }
        }
        0.0
    })
}

/// Normalized discounted cumulative gain at `k`.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport, EvalError> {
    metric_mean(run, qrels, |ranking, judgments| {
        let dcg: f64 = ranking
            .entries
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, (doc_id, _))| {
                let g = judgments.get(doc_id).copied().unwrap_or(0);
                (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2()
            })
            .sum();
        let mut ideal: Vec<u32> = judgments.values().copied().collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
            .sum();
        dcg / idcg
    })
}

/// Fraction of each query's relevant documents found in the top `k`.
pub fn recall_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport, EvalError> {
    metric_mean(run, qrels, |ranking, judgments| {
        let relevant = judgments.values().filter(|&&g| g >= 1).count();
        let hits = ranking
            .entries
            .iter()
            .take(k)
            .filter(|(doc_id, _)| judgments.get(doc_id).copied().unwrap_or(0) >= 1)
            .count();
        hits as f64 / relevant as f64
    })
}

/// Equal-width histogram with clipping counters and moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub clipped_low: u64,
    pub clipped_high: u64,
    pub mean: f64,
    pub sd: f64,
}

/// Bin `scores` into `bins` equal-width buckets over `[lo, hi]`; out-of-range
/// values are clipped to the edge bins and counted separately. The counts
/// always sum to `scores.len()`.
pub fn reward_histogram(scores: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram, EvalError> {
    if bins == 0 {
        return Err(EvalError::NoBins);
    }
    if !(lo < hi) {
        return Err(EvalError::InvalidRange { lo, hi });
    }
    let mut counts = vec![0u64; bins];
    let mut clipped_low = 0u64;
    let mut clipped_high = 0u64;
    let width = (hi - lo) / bins as f64;
    for &s in scores {
        let bin = if s < lo {
            clipped_low += 1;
            0
        } else if s > hi {
            clipped_high += 1;
            bins - 1
        } else {
            (((s - lo) / width) as usize).min(bins - 1)
        };
        counts[bin] += 1;
    }
    let n = scores.len() as f64;
    let mean = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / n };
    let sd = if scores.is_empty() {
        0.0
    } else {
        (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt()
    };
    Ok(Histogram { lo, hi, counts, clipped_low, clipped_high, mean, sd })
}

/// CSV rendering: one `bin_lo,bin_hi,count` row per bin plus a trailing
/// comment row with the moments.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    let width = (h.hi - h.lo) / h.counts.len() as f64;
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", h.lo + i as f64 * width, h.lo + (i + 1) as f64 * width, c);
    }
    let _ = writeln!(out, "# mean={} sd={} clipped_low={} clipped_high={}", h.mean, h.sd, h.clipped_low, h.clipped_high);
    out
}

/// Rank a run for every evaluation query with the given embedder.
pub fn build_run(
    embedder: &EmbedderParams,
    eval_queries: &[(String, Vec<TokenId>)],
    corpus: &Corpus,
    k: usize,
    tag: &str,
) -> Result<RunFile, EvalError> {
    let embeddings = CorpusEmbeddings::compute(embedder, corpus)?;
    let mut rankings = Vec::with_capacity(eval_queries.len());
    for (query_id, tokens) in eval_queries {
        let q_vec = embed(embedder, tokens)?;
        rankings.push(retrieve_topk_precomputed(&q_vec, query_id, &embeddings, k)?);
    }
    Ok(RunFile { rankings, tag: tag.to_string() })
}

/// Inputs shared by every run of a scaling sweep.
pub struct ScalingInputs<'a> {
    pub examples: &'a [TrainExample],
    pub corpus: &'a Corpus,
    pub qrels: &'a Qrels,
    pub eval_queries: &'a [(String, Vec<TokenId>)],
    pub embedder_dim: usize,
    pub embedder_init_seed: u64,
    pub train: RetrieverTrainConfig,
    pub mrr_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub size: usize,
    pub seed: u64,
    pub mrr: f64,
}

/// Train one retriever per `(size, seed)` on nested prefixes of the training
/// set and evaluate MRR. Sizes must be non-descending and nonzero.
pub fn scaling_run(
    sizes: &[usize],
    inputs: &ScalingInputs,
    seeds: &[u64],
) -> Result<Vec<ScalingPoint>, EvalError> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] > w[1]) || sizes.contains(&0) {
        return Err(EvalError::InvalidSizes);
    }
    if let Some(&max) = sizes.last() {
        if max > inputs.examples.len() {
            return Err(EvalError::PoolExhausted { requested: max, available: inputs.examples.len() });
        }
    }
    let mut points = Vec::with_capacity(sizes.len() * seeds.len());
    for &seed in seeds {
        for &size in sizes {
            let init = EmbedderParams::init(
                inputs.corpus.vocab().total_ids(),
                inputs.embedder_dim,
                inputs.embedder_init_seed.wrapping_add(seed),
            );
            let config = RetrieverTrainConfig { seed, ..inputs.train.clone() };
            let (trained, _) = train_retriever(&init, &inputs.examples[..size], inputs.corpus, &config)?;
            let run = build_run(&trained, inputs.eval_queries, inputs.corpus, inputs.mrr_k, "scaling")?;
            let mrr = mrr_at_k(&run, inputs.qrels, inputs.mrr_k)?;
            points.push(ScalingPoint { size, seed, mrr: mrr.value });
        }
    }
    Ok(points)
}

/// CSV rendering of a scaling sweep: `size,seed,mrr` rows.
pub fn scaling_csv(points: &[ScalingPoint]) -> String {
    let mut out = String::from("size,seed,mrr\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.size, p.seed, p.mrr);
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("comparable values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn run_of(entries: Vec<(&str, Vec<&str>)>) -> RunFile {
        let rankings = entries
            .into_iter()
            .map(|(qid, docs)| Ranking {
                query_id: qid.to_string(),
                entries: docs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| (d.to_string(), 1.0 - 0.01 * i as f64))
                    .collect(),
            })
            .collect();
        RunFile { rankings, tag: "test".to_string() }
    }

    #[test]
    fn mrr_of_first_relevant_at_rank_four() {
        let run = run_of(vec![("q1", vec!["a", "b", "c", "d", "e"])]);
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d", 1);
        let m = mrr_at_k(&run, &qrels, 100).unwrap();
        assert_eq!(m.value, 0.25);
    }

    #[test]
    fn mrr_cutoff_zeroes_late_hits() {
        let run = run_of(vec![("q1", vec!["a", "b", "c"])]);
        let mut qrels = Qrels::new();
        qrels.insert("q1", "c", 1);
        assert_eq!(mrr_at_k(&run, &qrels, 2).unwrap().value, 0.0);
        assert_eq!(mrr_at_k(&run, &qrels, 3).unwrap().value, 1.0 / 3.0);
    }

    #[test]
    fn mrr_is_a_mean_over_queries() {
        let run = run_of(vec![("q1", vec!["a", "b"]), ("q2", vec!["x", "y", "z"])]);
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 1);
        qrels.insert("q2", "z", 1);
        let m = mrr_at_k(&run, &qrels, 10).unwrap();
        assert!((m.value - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn missing_judgments_are_an_error() {
        let run = run_of(vec![("q9", vec!["a"])]);
        let qrels = Qrels::new();
        assert!(matches!(mrr_at_k(&run, &qrels, 10), Err(EvalError::MissingJudgments(_))));
    }

    #[test]
    fn ndcg_single_relevant_at_rank_one_is_perfect() {
        let run = run_of(vec![("q1", vec!["a", "b"])]);
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 1);
        assert!((ndcg_at_k(&run, &qrels, 10).unwrap().value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_single_relevant_at_rank_two() {
        let run = run_of(vec![("q1", vec!["a", "b", "c"])]);
        let mut qrels = Qrels::new();
        qrels.insert("q1", "b", 1);
        let got = ndcg_at_k(&run, &qrels, 10).unwrap().value;
        let want = 1.0 / 3f64.log2();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn ndcg_graded_example() {
        // grade-2 doc at rank 1, grade-1 doc at rank 3.
        let run = run_of(vec![("q1", vec!["a", "b", "c"])]);
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 2);
        qrels.insert("q1", "c", 1);
        let got = ndcg_at_k(&run, &qrels, 10).unwrap().value;
        let dcg = 3.0 + 1.0 / 4f64.log2();
        let idcg = 3.0 + 1.0 / 3f64.log2();
        assert!((got - dcg / idcg).abs() < 1e-15);
        assert!((got - 0.9639).abs() < 1e-4);
    }

    #[test]
    fn recall_fractions() {
        let run = run_of(vec![("q1", vec!["a", "b", "c"])]);
        let mut qrels = Qrels::new();
        for d in ["a", "b", "x", "y"] {
            qrels.insert("q1", d, 1);
        }
        assert_eq!(recall_at_k(&run, &qrels, 3).unwrap().value, 0.5);
        let mut qrels_all = Qrels::new();
        qrels_all.insert("q1", "a", 1);
        qrels_all.insert("q1", "c", 1);
        assert_eq!(recall_at_k(&run, &qrels_all, 3).unwrap().value, 1.0);
        let mut qrels_none = Qrels::new();
        qrels_none.insert("q1", "zz", 1);
        assert_eq!(recall_at_k(&run, &qrels_none, 3).unwrap().value, 0.0);
    }

    #[test]
    fn all_zero_grade_queries_are_skipped_and_counted() {
        let run = run_of(vec![("q1", vec!["a"]), ("q2", vec!["b"])]);
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 1);
        qrels.insert("q2", "b", 0);
        for f in [mrr_at_k, ndcg_at_k, recall_at_k] {
            let m = f(&run, &qrels, 10).unwrap();
            assert_eq!(m.evaluated, 1);
            assert_eq!(m.skipped_no_positive, 1);
            assert_eq!(m.value, 1.0);
        }
    }

    #[test]
    fn perfect_ranking_maxes_every_metric() {
        let run = run_of(vec![("q1", vec!["hi", "lo", "x", "y"])]);
        let mut qrels = Qrels::new();
        qrels.insert("q1", "hi", 2);
        qrels.insert("q1", "lo", 1);
        assert!((mrr_at_k(&run, &qrels, 10).unwrap().value - 1.0).abs() < 1e-15);
        assert!((ndcg_at_k(&run, &qrels, 10).unwrap().value - 1.0).abs() < 1e-15);
        assert!((recall_at_k(&run, &qrels, 10).unwrap().value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn metrics_are_invariant_to_consistent_doc_renaming() {
        let run = run_of(vec![("q1", vec!["a", "b", "c", "d"])]);
        let mut qrels = Qrels::new();
        qrels.insert("q1", "b", 2);
        qrels.insert("q1", "d", 1);

        let rename = |d: &str| format!("zz-{d}");
        let renamed_run = RunFile {
            tag: run.tag.clone(),
            rankings: run
                .rankings
                .iter()
                .map(|r| Ranking {
                    query_id: r.query_id.clone(),
                    entries: r.entries.iter().map(|(d, s)| (rename(d), *s)).collect(),
                })
                .collect(),
        };
        let mut renamed_qrels = Qrels::new();
        renamed_qrels.insert("q1", &rename("b"), 2);
        renamed_qrels.insert("q1", &rename("d"), 1);

        for k in [1, 2, 10] {
            assert_eq!(
                mrr_at_k(&run, &qrels, k).unwrap().value,
                mrr_at_k(&renamed_run, &renamed_qrels, k).unwrap().value
            );
            assert_eq!(
                ndcg_at_k(&run, &qrels, k).unwrap().value,
                ndcg_at_k(&renamed_run, &renamed_qrels, k).unwrap().value
            );
            assert_eq!(
                recall_at_k(&run, &qrels, k).unwrap().value,
                recall_at_k(&renamed_run, &renamed_qrels, k).unwrap().value
            );
        }
    }

    #[test]
    fn metrics_match_a_brute_force_reference_on_random_instances() {
        // Independent implementations written directly from the definitions.
        fn ref_mrr(ranked: &[String], rel: &BTreeMap<String, u32>, k: usize) -> f64 {
            for (i, d) in ranked.iter().enumerate() {
                if i >= k {
                    break;
                }
                if rel.get(d).copied().unwrap_or(0) > 0 {
                    return 1.0 / (i as f64 + 1.0);
                }
            }
            0.0
        }
        fn ref_dcg(grades: &[u32]) -> f64 {
            grades
                .iter()
                .enumerate()
                .map(|(i, &g)| ((1u64 << g) - 1) as f64 / ((i as f64) + 2.0).log2())
                .sum()
        }
        fn ref_ndcg(ranked: &[String], rel: &BTreeMap<String, u32>, k: usize) -> f64 {
            let got: Vec<u32> =
                ranked.iter().take(k).map(|d| rel.get(d).copied().unwrap_or(0)).collect();
            let mut ideal: Vec<u32> = rel.values().copied().collect();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            ideal.truncate(k);
            ref_dcg(&got) / ref_dcg(&ideal)
        }
        fn ref_recall(ranked: &[String], rel: &BTreeMap<String, u32>, k: usize) -> f64 {
            let total = rel.values().filter(|&&g| g > 0).count();
            let hit =
                ranked.iter().take(k).filter(|d| rel.get(*d).copied().unwrap_or(0) > 0).count();
            hit as f64 / total as f64
        }

        let mut rng = crate::rng::derive_rng(99, "metric_oracle", &[]);
        for case in 0..200 {
            let n_docs = rng.gen_range(2..=20);
            let n_queries = rng.gen_range(1..=5);
            let k = rng.gen_range(1..=n_docs);
            let mut rankings = Vec::new();
            let mut qrels = Qrels::new();
            let mut refs: Vec<(Vec<String>, BTreeMap<String, u32>)> = Vec::new();
            for q in 0..n_queries {
                let qid = format!("q{case}-{q}");
                let mut docs: Vec<String> = (0..n_docs).map(|d| format!("d{d}")).collect();
                for i in 0..docs.len() {
                    let j = rng.gen_range(i..docs.len());
                    docs.swap(i, j);
                }
                let mut rel = BTreeMap::new();
                loop {
                    for d in 0..n_docs {
                        if rng.gen_range(0..3) == 0 {
                            rel.insert(format!("d{d}"), rng.gen_range(1..=3u32));
                        }
                    }
                    if rel.values().any(|&g| g > 0) {
                        break;
                    }
                }
                for (d, g) in &rel {
                    qrels.insert(&qid, d, *g);
                }
                rankings.push(Ranking {
                    query_id: qid,
                    entries: docs.iter().enumerate().map(|(i, d)| (d.clone(), -(i as f64))).collect(),
                });
                refs.push((docs, rel));
            }
            let run = RunFile { rankings, tag: "oracle".to_string() };

            let want_mrr = refs.iter().map(|(d, r)| ref_mrr(d, r, k)).sum::<f64>() / refs.len() as f64;
            let want_ndcg = refs.iter().map(|(d, r)| ref_ndcg(d, r, k)).sum::<f64>() / refs.len() as f64;
            let want_recall =
                refs.iter().map(|(d, r)| ref_recall(d, r, k)).sum::<f64>() / refs.len() as f64;

            assert!((mrr_at_k(&run, &qrels, k).unwrap().value - want_mrr).abs() < 1e-12);
            assert!((ndcg_at_k(&run, &qrels, k).unwrap().value - want_ndcg).abs() < 1e-12);
            assert!((recall_at_k(&run, &qrels, k).unwrap().value - want_recall).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_scores_fill_one_bin_with_zero_sd() {
        let h = reward_histogram(&[0.4; 17], 10, 0.0, 1.0).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 17);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.sd, 0.0);
    }

    #[test]
    fn two_scores_two_bins() {
        let h = reward_histogram(&[0.1, 0.9], 2, 0.0, 1.0).unwrap();
        assert_eq!(h.counts, vec![1, 1]);
    }

    #[test]
    fn histogram_conserves_counts_with_clipping() {
        let scores = [-0.5, 0.0, 0.3, 1.0, 2.5];
        let h = reward_histogram(&scores, 4, 0.0, 1.0).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), scores.len() as u64);
        assert_eq!(h.clipped_low, 1);
        assert_eq!(h.clipped_high, 1);
    }

    #[test]
    fn qrels_trec_round_trip() {
        let mut qrels = Qrels::new();
        qrels.insert("q2", "d1", 0);
        qrels.insert("q1", "d9", 2);
        qrels.insert("q1", "d2", 1);
        let text = qrels.to_trec();
        assert_eq!(Qrels::from_trec(&text).unwrap(), qrels);
        assert!(text.starts_with("q1 0 d2 1\n"));
    }

    #[test]
    fn run_trec_round_trip() {
        let run = run_of(vec![("q1", vec!["a", "b"]), ("q2", vec!["c"])]);
        let text = run.to_trec();
        let parsed = RunFile::from_trec(&text).unwrap();
        assert_eq!(parsed, run);
    }

    #[test]
    fn spearman_detects_monotone_relations() {
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[9.0, 5.0, 1.0]) + 1.0).abs() < 1e-12);
        let rho = spearman_rho(&[1.0, 1.0, 2.0, 2.0], &[3.0, 3.0, 5.0, 5.0]);
        assert!((rho - 1.0).abs() < 1e-12);
    }
}
