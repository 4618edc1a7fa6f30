//! Hard-negative mining over top-k retrieval, positive relabeling or
//! consistency filtering, and retention accounting.
//!
//! Negatives are always sampled strictly below the effective positive in the
//! truncated ranking. The `relabel` policy promotes the rank-1 document to
//! positive when the original falls outside the top-k; the `filter` policy
//! discards such queries instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TokenId};
use crate::retriever::{embed, CorpusEmbeddings, EmbedderParams, RetrieverError, TrainExample};
use crate::rng::derive_rng;
use rand::Rng;

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("empty query")]
    EmptyQuery,
    #[error("empty ranking for query `{0}`")]
    EmptyRanking(String),
    #[error("positive `{doc_id}` not present in the ranking of query `{query_id}`")]
    PositiveMissing { query_id: String, doc_id: String },
    #[error("no candidates ranked below the positive for query `{0}`")]
    MiningFailed(String),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
}

/// Descending-score ranked list for one query. Ties are broken by ascending
/// doc id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl Ranking {
    /// Zero-based rank of a document, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().position(|(d, _)| d == doc_id)
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

fn ranking_order(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1).expect("comparable scores").then_with(|| a.0.cmp(&b.0))
}

/// Exact top-k cosine ranking over the whole corpus via partial selection.
/// Documents that embed to the zero vector rank last (score -inf).
pub fn retrieve_topk(
    embedder: &EmbedderParams,
    query_id: &str,
    query: &[TokenId],
    corpus: &Corpus,
    k: usize,
) -> Result<Ranking, MiningError> {
    if query.is_empty() {
        return Err(MiningError::EmptyQuery);
    }
    let q_vec = embed(embedder, query)?;
    let embeddings = CorpusEmbeddings::compute(embedder, corpus)?;
    retrieve_topk_precomputed(&q_vec, query_id, &embeddings, k)
}

/// Top-k against precomputed document embeddings.
pub fn retrieve_topk_precomputed(
    query_vec: &[f64],
    query_id: &str,
    embeddings: &CorpusEmbeddings,
    k: usize,
) -> Result<Ranking, MiningError> {
    let q_norm = crate::linalg::norm(query_vec);
    if q_norm == 0.0 {
        return Err(MiningError::Retriever(RetrieverError::ZeroVector));
    }
    let mut scored: Vec<(String, f64)> = embeddings
        .doc_ids
        .iter()
        .enumerate()
        .map(|(i, doc_id)| {
            let row = embeddings.row(i);
            let d_norm = crate::linalg::norm(row);
            let score = if d_norm == 0.0 {
                f64::NEG_INFINITY
            } else {
                crate::linalg::dot(query_vec, row) / (q_norm * d_norm)
            };
            (doc_id.clone(), score)
        })
        .collect();
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, ranking_order);
        scored.truncate(k);
    }
    scored.sort_by(ranking_order);
    Ok(Ranking { query_id: query_id.to_string(), entries: scored })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelingPolicy {
    /// The rank-1 document becomes the positive when the original is missing.
    Relabel,
    /// Queries whose positive is outside the top-k are discarded.
    Filter,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelOutcome {
    Keep { effective_positive: String, relabeled: bool },
    Discard,
}

/// Decide the effective positive for a query given its truncated top-k ranking.
pub fn apply_labeling_policy(
    ranking: &Ranking,
    positive: &str,
    policy: LabelingPolicy,
    k: usize,
) -> Result<LabelOutcome, MiningError> {
    if ranking.entries.is_empty() {
        return Err(MiningError::EmptyRanking(ranking.query_id.clone()));
    }
    debug_assert!(ranking.entries.len() <= k, "ranking must be truncated at k");
    let in_topk = ranking.rank_of(positive).is_some();
    if in_topk {
        return Ok(LabelOutcome::Keep { effective_positive: positive.to_string(), relabeled: false });
    }
    match policy {
        LabelingPolicy::Relabel => Ok(LabelOutcome::Keep {
            effective_positive: ranking.entries[0].0.clone(),
            relabeled: true,
        }),
        LabelingPolicy::Filter => Ok(LabelOutcome::Discard),
    }
}

/// Uniform sample without replacement of `min(m, available)` documents ranked
/// strictly below the effective positive, seeded by `(seed, query_id)`.
pub fn mine_negatives(
    ranking: &Ranking,
    effective_positive: &str,
    m: usize,
    seed: u64,
) -> Result<Vec<String>, MiningError> {
    let pos_rank = ranking.rank_of(effective_positive).ok_or_else(|| MiningError::PositiveMissing {
        query_id: ranking.query_id.clone(),
        doc_id: effective_positive.to_string(),
    })?;
    let mut candidates: Vec<&str> =
        ranking.entries[pos_rank + 1..].iter().map(|(d, _)| d.as_str()).collect();
    if candidates.is_empty() {
        return Err(MiningError::MiningFailed(ranking.query_id.clone()));
    }
    let take = m.min(candidates.len());
    let mut rng = derive_rng(seed, "mine_negatives", &[&ranking.query_id]);
    for i in 0..take {
        let j = rng.gen_range(i..candidates.len());
        candidates.swap(i, j);
    }
    Ok(candidates[..take].iter().map(|s| s.to_string()).collect())
}

/// Per-query mining outcome, for retention accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOutcome {
    Kept { relabeled: bool },
    Discarded,
    MiningFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub pool_size: usize,
    pub kept: usize,
    pub rate: f64,
}

/// Retention over a pool of query outcomes: `kept / pool_size`.
pub fn retention_report(outcomes: &[QueryOutcome]) -> RetentionStats {
    let kept = outcomes.iter().filter(|o| matches!(o, QueryOutcome::Kept { .. })).count();
    let pool_size = outcomes.len();
    let rate = if pool_size == 0 { 0.0 } else { kept as f64 / pool_size as f64 };
    RetentionStats { pool_size, kept, rate }
}

/// One mined retriever training instance, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedExample {
    pub query_id: String,
    pub query: Vec<TokenId>,
    pub positive: String,
    pub negatives: Vec<String>,
    pub relabeled: bool,
}

impl MinedExample {
    pub fn to_train_example(&self) -> TrainExample {
        TrainExample {
            query: self.query.clone(),
            positive: self.positive.clone(),
            negatives: self.negatives.clone(),
        }
    }
}

/// A generated query awaiting mining: `(query_id, tokens, original positive)`.
#[derive(Debug, Clone)]
pub struct QueryCandidate {
    pub query_id: String,
    pub tokens: Vec<TokenId>,
    pub positive: String,
}

/// Retrieval + labeling policy + negative mining for a whole query pool.
/// Empty queries and mining failures count against retention.
pub fn mine_training_set(
    embedder: &EmbedderParams,
    candidates: &[QueryCandidate],
    corpus: &Corpus,
    k: usize,
    m: usize,
    policy: LabelingPolicy,
    seed: u64,
) -> Result<(Vec<MinedExample>, Vec<QueryOutcome>, RetentionStats), MiningError> {
    let embeddings = CorpusEmbeddings::compute(embedder, corpus)?;
    let mut examples = Vec::new();
    let mut outcomes = Vec::with_capacity(candidates.len());
    for cand in candidates {
        if cand.tokens.is_empty() {
            outcomes.push(QueryOutcome::MiningFailed);
            continue;
        }
        let q_vec = embed(embedder, &cand.tokens)?;
        if crate::linalg::norm(&q_vec) == 0.0 {
            outcomes.push(QueryOutcome::MiningFailed);
            continue;
        }
        let ranking = retrieve_topk_precomputed(&q_vec, &cand.query_id, &embeddings, k)?;
        match apply_labeling_policy(&ranking, &cand.positive, policy, k)? {
            LabelOutcome::Discard => outcomes.push(QueryOutcome::Discarded),
            LabelOutcome::Keep { effective_positive, relabeled } => {
                match mine_negatives(&ranking, &effective_positive, m, seed) {
                    Ok(negatives) => {
                        examples.push(MinedExample {
                            query_id: cand.query_id.clone(),
                            query: cand.tokens.clone(),
                            positive: effective_positive,
                            negatives,
                            relabeled,
                        });
                        outcomes.push(QueryOutcome::Kept { relabeled });
                    }
                    Err(MiningError::MiningFailed(_)) => outcomes.push(QueryOutcome::MiningFailed),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let stats = retention_report(&outcomes);
    Ok((examples, outcomes, stats))
}
