//! Topic-structured synthetic corpora with a ground-truth relevance oracle.
//!
//! Each document belongs to one topic and draws every token from its topic
//! vocabulary with probability `mix`, otherwise from the shared vocabulary.
//! Topic vocabularies are pairwise disjoint and disjoint from the shared one,
//! so "fraction of query tokens in the document's topic vocabulary" is an
//! exact, cheap relevance oracle. Each document also gets a held-out oracle
//! query (sampled from its own on-topic tokens) judged relevant to it, which
//! is what the retrieval metrics evaluate against.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Document, TokenId, Vocabulary};
use crate::eval::Qrels;
use crate::mining::Ranking;
use crate::retriever::{embed, EmbedderParams, RetrieverError};
use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum SimlabError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("doc id `{0}` is not part of this topic model")]
    UnknownDoc(String),
    #[error("empty query")]
    EmptyQuery,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("topic model format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimlabConfig {
    pub num_topics: usize,
    pub docs_per_topic: usize,
    pub doc_len: usize,
    pub vocab_per_topic: usize,
    pub shared_vocab_size: usize,
    /// Probability that a document token is drawn from its topic vocabulary.
    pub mix: f64,
    /// Tokens per held-out oracle query.
    pub oracle_query_len: usize,
    pub seed: u64,
}

impl Default for SimlabConfig {
    fn default() -> Self {
        SimlabConfig {
            num_topics: 20,
            docs_per_topic: 100,
            doc_len: 100,
            vocab_per_topic: 25,
            shared_vocab_size: 200,
            mix: 0.8,
            oracle_query_len: 8,
            seed: 0,
        }
    }
}

/// Ground-truth topic structure behind a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub num_topics: usize,
    pub topic_vocab: Vec<BTreeSet<String>>,
    pub shared_vocab: BTreeSet<String>,
    pub doc_topic: BTreeMap<String, usize>,
    pub mix: f64,
}

impl TopicModel {
    pub fn topic_of_doc(&self, doc_id: &str) -> Option<usize> {
        self.doc_topic.get(doc_id).copied()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimlabError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimlabError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// A held-out evaluation query (token strings, space-joined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct SimlabOutput {
    pub corpus: Corpus,
    pub topics: TopicModel,
    pub qrels: Qrels,
    pub eval_queries: Vec<EvalQuery>,
}

fn topic_token(topic: usize, j: usize) -> String {
    format!("t{topic:02}w{j:02}")
}

fn shared_token(j: usize) -> String {
    format!("sh{j:03}")
}

/// Generate a corpus, its topic model, held-out oracle queries, and qrels,
/// all deterministic in `config.seed`.
pub fn gen_synthetic_corpus(config: &SimlabConfig) -> Result<SimlabOutput, SimlabError> {
    for (name, v) in [
        ("num_topics", config.num_topics),
        ("docs_per_topic", config.docs_per_topic),
        ("doc_len", config.doc_len),
        ("vocab_per_topic", config.vocab_per_topic),
        ("shared_vocab_size", config.shared_vocab_size),
        ("oracle_query_len", config.oracle_query_len),
    ] {
        if v == 0 {
            return Err(SimlabError::InvalidConfig(format!("{name} must be >= 1")));
        }
    }
    if !(config.mix > 0.0 && config.mix <= 1.0) {
        return Err(SimlabError::InvalidConfig(format!("mix must be in (0, 1], got {}", config.mix)));
    }

    let topic_vocab: Vec<Vec<String>> = (0..config.num_topics)
        .map(|t| (0..config.vocab_per_topic).map(|j| topic_token(t, j)).collect())
        .collect();
    let shared: Vec<String> = (0..config.shared_vocab_size).map(shared_token).collect();

    let mut records = Vec::with_capacity(config.num_topics * config.docs_per_topic);
    let mut doc_topic = BTreeMap::new();
    let mut qrels = Qrels::new();
    let mut eval_queries = Vec::with_capacity(records.capacity());

    for topic in 0..config.num_topics {
        for i in 0..config.docs_per_topic {
            let doc_id = format!("t{topic:02}d{i:03}");
            let mut rng = derive_rng(config.seed, "simlab_doc", &[&doc_id]);
            let mut tokens = Vec::with_capacity(config.doc_len);
            for _ in 0..config.doc_len {
                if rng.gen::<f64>() < config.mix {
                    tokens.push(topic_vocab[topic][rng.gen_range(0..config.vocab_per_topic)].clone());
                } else {
                    tokens.push(shared[rng.gen_range(0..config.shared_vocab_size)].clone());
                }
            }

            // Held-out oracle query: sampled from the doc's own on-topic
            // tokens (falling back to the topic vocabulary for the rare
            // document that drew none).
            let on_topic: Vec<&String> =
                tokens.iter().filter(|t| t.starts_with(&format!("t{topic:02}w"))).collect();
            let mut qrng = derive_rng(config.seed, "simlab_query", &[&doc_id]);
            let query_tokens: Vec<String> = (0..config.oracle_query_len)
                .map(|_| {
                    if on_topic.is_empty() {
                        topic_vocab[topic][qrng.gen_range(0..config.vocab_per_topic)].clone()
                    } else {
                        on_topic[qrng.gen_range(0..on_topic.len())].clone()
                    }
                })
                .collect();
            let query_id = format!("q-{doc_id}");
            qrels.insert(&query_id, &doc_id, 1);
            eval_queries.push(EvalQuery { query_id, text: query_tokens.join(" ") });

            doc_topic.insert(doc_id.clone(), topic);
            records.push((doc_id, tokens.join(" ")));
        }
    }

    let corpus = Corpus::from_records(records)?;
    let topics = TopicModel {
        num_topics: config.num_topics,
        topic_vocab: topic_vocab.into_iter().map(|v| v.into_iter().collect()).collect(),
        shared_vocab: shared.into_iter().collect(),
        doc_topic,
        mix: config.mix,
    };
    Ok(SimlabOutput { corpus, topics, qrels, eval_queries })
}

/// Fraction of the query's tokens (with multiplicity) that belong to the
/// document's topic vocabulary.
pub fn oracle_reward(
    topics: &TopicModel,
    vocab: &Vocabulary,
    query: &[TokenId],
    d: &Document,
) -> Result<f64, SimlabError> {
    if query.is_empty() {
        return Err(SimlabError::EmptyQuery);
    }
    let topic = topics.topic_of_doc(&d.doc_id).ok_or_else(|| SimlabError::UnknownDoc(d.doc_id.clone()))?;
    let topic_set = &topics.topic_vocab[topic];
    let on_topic = query
        .iter()
        .filter(|&&t| vocab.token_of(t).is_some_and(|s| topic_set.contains(s)))
        .count();
    Ok(on_topic as f64 / query.len() as f64)
}

/// Full-sort cosine ranking over the whole corpus, with the same tie-break as
/// top-k retrieval. This is the independent oracle for `retrieve_topk`: it
/// embeds per document and sorts the complete list instead of selecting.
pub fn brute_force_ranking(
    embedder: &EmbedderParams,
    query_id: &str,
    query: &[TokenId],
    corpus: &Corpus,
) -> Result<Ranking, SimlabError> {
    if query.is_empty() {
        return Err(SimlabError::EmptyQuery);
    }
    let q = embed(embedder, query)?;
    let qn = crate::linalg::norm(&q);
    if qn == 0.0 {
        return Err(SimlabError::Retriever(RetrieverError::ZeroVector));
    }
    let mut entries: Vec<(String, f64)> = Vec::with_capacity(corpus.len());
    for doc in corpus.documents() {
        let v = embed(embedder, &doc.tokens)?;
        let vn = crate::linalg::norm(&v);
        let score =
            if vn == 0.0 { f64::NEG_INFINITY } else { crate::linalg::dot(&q, &v) / (qn * vn) };
        entries.push((doc.doc_id.clone(), score));
    }
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("comparable scores").then_with(|| a.0.cmp(&b.0)));
    Ok(Ranking { query_id: query_id.to_string(), entries })
}
