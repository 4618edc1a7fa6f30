//! Tiny conditional autoregressive query generator.
//!
//! One hidden layer conditions next-token logits on a document context vector
//! and the previous token:
//!
//! ```text
//! ctx      = mean(emb(d)) - alpha * mean(emb(d_neg))
//! h_t      = tanh(Wc * ctx + Wp * emb(prev_t) + b)
//! logits_t = Wo * h_t                 (rows: content vocabulary, then EOS)
//! ```
//!
//! The module provides ancestral sampling, exact sequence log-probabilities,
//! and the exact reverse-mode gradient of a sequence log-probability with
//! respect to every parameter block, including the token embeddings through
//! the context vector. The BOS step reuses the EOS embedding row.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Document, TokenId, EOS_ID, RESERVED_IDS};
use crate::linalg::{axpy, dot, softmax, Mat};
use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum GenModelError {
    #[error("document `{0}` has no tokens")]
    EmptyDocument(String),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("token id {0} is not a content token of this model")]
    UnknownToken(TokenId),
    #[error("non-finite value in {0}")]
    Numerical(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Dense parameter bundle for the generator (policy or reference).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// `(content_vocab + reserved) x embed_dim`; row ids follow the corpus vocabulary.
    pub token_embeddings: Mat,
    /// `hidden_dim x embed_dim`.
    pub context_proj: Mat,
    /// `hidden_dim x embed_dim`.
    pub prev_token_proj: Mat,
    /// `hidden_dim`.
    pub hidden_bias: Vec<f64>,
    /// `(content_vocab + 1) x hidden_dim`; rows index the content vocabulary
    /// in id order, with EOS last.
    pub output_proj: Mat,
    /// Contrastive conditioning weight alpha, kept >= 0.
    pub contrast_weight: f64,
    /// Seed the parameters were initialized from.
    pub seed: u64,
}

impl GeneratorParams {
    /// Initialize every entry uniform(-0.1, 0.1) from `seed`.
    pub fn init(vocab_total_ids: usize, embed_dim: usize, hidden_dim: usize, alpha: f64, seed: u64) -> Self {
        let content = vocab_total_ids - RESERVED_IDS;
        let mut rng = derive_rng(seed, "genmodel_init", &[]);
        let token_embeddings = Mat::from_fn(vocab_total_ids, embed_dim, |_, _| rng.gen_range(-0.1..0.1));
        let context_proj = Mat::from_fn(hidden_dim, embed_dim, |_, _| rng.gen_range(-0.1..0.1));
        let prev_token_proj = Mat::from_fn(hidden_dim, embed_dim, |_, _| rng.gen_range(-0.1..0.1));
        let hidden_bias: Vec<f64> = (0..hidden_dim).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let output_proj = Mat::from_fn(content + 1, hidden_dim, |_, _| rng.gen_range(-0.1..0.1));
        GeneratorParams {
            token_embeddings,
            context_proj,
            prev_token_proj,
            hidden_bias,
            output_proj,
            contrast_weight: alpha,
            seed,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.token_embeddings.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_bias.len()
    }

    /// Number of content tokens in the model's vocabulary.
    pub fn content_len(&self) -> usize {
        self.output_proj.rows - 1
    }

    /// Size of the output distribution: content vocabulary plus EOS.
    pub fn output_dim(&self) -> usize {
        self.output_proj.rows
    }

    /// Output row for EOS.
    pub fn eos_row(&self) -> usize {
        self.output_proj.rows - 1
    }

    /// Output row for a content token id.
    pub fn output_row(&self, token: TokenId) -> Result<usize, GenModelError> {
        if token < RESERVED_IDS || token - RESERVED_IDS >= self.content_len() {
            return Err(GenModelError::UnknownToken(token));
        }
        Ok(token - RESERVED_IDS)
    }

    /// Content token id for an output row (None for the EOS row).
    pub fn token_of_row(&self, row: usize) -> Option<TokenId> {
        (row < self.content_len()).then_some(row + RESERVED_IDS)
    }

    pub fn total_parameter_count(&self) -> usize {
        self.to_flat().len()
    }

    /// Flatten all parameter blocks in a fixed order (for gradient checking).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.token_embeddings.data);
        out.extend_from_slice(&self.context_proj.data);
        out.extend_from_slice(&self.prev_token_proj.data);
        out.extend_from_slice(&self.hidden_bias);
        out.extend_from_slice(&self.output_proj.data);
        out.push(self.contrast_weight);
        out
    }

    /// Inverse of [`Self::to_flat`]; shapes are taken from `self`.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut out = self.clone();
        let mut at = 0usize;
        let mut take = |n: usize| {
            let s = &flat[at..at + n];
            at += n;
            s.to_vec()
        };
        out.token_embeddings.data = take(self.token_embeddings.data.len());
        out.context_proj.data = take(self.context_proj.data.len());
        out.prev_token_proj.data = take(self.prev_token_proj.data.len());
        out.hidden_bias = take(self.hidden_bias.len());
        out.output_proj.data = take(self.output_proj.data.len());
        out.contrast_weight = flat[at];
        out
    }

    /// `self += scale * grad`, clamping the contrast weight at zero.
    pub fn apply_grad(&mut self, grad: &GeneratorGrad, scale: f64) {
        for (a, g) in self.token_embeddings.data.iter_mut().zip(&grad.token_embeddings.data) {
            *a += scale * g;
        }
        for (a, g) in self.context_proj.data.iter_mut().zip(&grad.context_proj.data) {
            *a += scale * g;
        }
        for (a, g) in self.prev_token_proj.data.iter_mut().zip(&grad.prev_token_proj.data) {
            *a += scale * g;
        }
        for (a, g) in self.hidden_bias.iter_mut().zip(&grad.hidden_bias) {
            *a += scale * g;
        }
        for (a, g) in self.output_proj.data.iter_mut().zip(&grad.output_proj.data) {
            *a += scale * g;
        }
        self.contrast_weight = (self.contrast_weight + scale * grad.contrast_weight).max(0.0);
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), GenModelError> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self, GenModelError> {
        let json = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&json)?)
    }
}

/// Gradient bundle shaped like [`GeneratorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorGrad {
    pub token_embeddings: Mat,
    pub context_proj: Mat,
    pub prev_token_proj: Mat,
    pub hidden_bias: Vec<f64>,
    pub output_proj: Mat,
    pub contrast_weight: f64,
}

impl GeneratorGrad {
    pub fn zeros_like(params: &GeneratorParams) -> Self {
        GeneratorGrad {
            token_embeddings: Mat::zeros(params.token_embeddings.rows, params.token_embeddings.cols),
            context_proj: Mat::zeros(params.context_proj.rows, params.context_proj.cols),
            prev_token_proj: Mat::zeros(params.prev_token_proj.rows, params.prev_token_proj.cols),
            hidden_bias: vec![0.0; params.hidden_bias.len()],
            output_proj: Mat::zeros(params.output_proj.rows, params.output_proj.cols),
            contrast_weight: 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &GeneratorGrad, scale: f64) {
        for (a, b) in self.token_embeddings.data.iter_mut().zip(&other.token_embeddings.data) {
            *a += scale * b;
        }
        for (a, b) in self.context_proj.data.iter_mut().zip(&other.context_proj.data) {
            *a += scale * b;
        }
        for (a, b) in self.prev_token_proj.data.iter_mut().zip(&other.prev_token_proj.data) {
            *a += scale * b;
        }
        for (a, b) in self.hidden_bias.iter_mut().zip(&other.hidden_bias) {
            *a += scale * b;
        }
        for (a, b) in self.output_proj.data.iter_mut().zip(&other.output_proj.data) {
            *a += scale * b;
        }
        self.contrast_weight += scale * other.contrast_weight;
    }

    pub fn scale(&mut self, s: f64) {
        self.token_embeddings.scale(s);
        self.context_proj.scale(s);
        self.prev_token_proj.scale(s);
        for g in &mut self.hidden_bias {
            *g *= s;
        }
        self.output_proj.scale(s);
        self.contrast_weight *= s;
    }

    /// Same coordinate order as [`GeneratorParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.token_embeddings.data);
        out.extend_from_slice(&self.context_proj.data);
        out.extend_from_slice(&self.prev_token_proj.data);
        out.extend_from_slice(&self.hidden_bias);
        out.extend_from_slice(&self.output_proj.data);
        out.push(self.contrast_weight);
        out
    }
}

/// Conditioning vector for one (document, negative) pair, carrying the token
/// lists so gradients can flow back into the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningContext {
    pub context_vector: Vec<f64>,
    pub source_doc: String,
    pub neg_doc: Option<String>,
    doc_tokens: Vec<TokenId>,
    neg_tokens: Option<Vec<TokenId>>,
}

fn mean_embedding(params: &GeneratorParams, tokens: &[TokenId]) -> Vec<f64> {
    let mut mean = vec![0.0; params.embed_dim()];
    for &t in tokens {
        axpy(&mut mean, 1.0, params.token_embeddings.row(t));
    }
    let inv = 1.0 / tokens.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    mean
}

/// `ctx = mean(emb(d)) - alpha * mean(emb(d_neg))`.
pub fn build_context(
    params: &GeneratorParams,
    d: &Document,
    d_neg: &Document,
) -> Result<ConditioningContext, GenModelError> {
    if d.tokens.is_empty() {
        return Err(GenModelError::EmptyDocument(d.doc_id.clone()));
    }
    if d_neg.tokens.is_empty() {
        return Err(GenModelError::EmptyDocument(d_neg.doc_id.clone()));
    }
    let mut ctx = mean_embedding(params, &d.tokens);
    let neg_mean = mean_embedding(params, &d_neg.tokens);
    axpy(&mut ctx, -params.contrast_weight, &neg_mean);
    Ok(ConditioningContext {
        context_vector: ctx,
        source_doc: d.doc_id.clone(),
        neg_doc: Some(d_neg.doc_id.clone()),
        doc_tokens: d.tokens.clone(),
        neg_tokens: Some(d_neg.tokens.clone()),
    })
}

/// Context without contrastive conditioning: `ctx = mean(emb(d))`.
pub fn build_context_solo(
    params: &GeneratorParams,
    d: &Document,
) -> Result<ConditioningContext, GenModelError> {
    if d.tokens.is_empty() {
        return Err(GenModelError::EmptyDocument(d.doc_id.clone()));
    }
    Ok(ConditioningContext {
        context_vector: mean_embedding(params, &d.tokens),
        source_doc: d.doc_id.clone(),
        neg_doc: None,
        doc_tokens: d.tokens.clone(),
        neg_tokens: None,
    })
}

/// Previous token of an autoregressive step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrevToken {
    Bos,
    Token(TokenId),
}

impl PrevToken {
    /// Embedding row; BOS reuses the EOS row.
    fn embedding_row(self) -> TokenId {
        match self {
            PrevToken::Bos => EOS_ID,
            PrevToken::Token(t) => t,
        }
    }
}

fn step_logits(
    params: &GeneratorParams,
    ctx_pre: &[f64],
    prev: PrevToken,
) -> Result<(Vec<f64>, Vec<f64>), GenModelError> {
    let row = prev.embedding_row();
    if row >= params.token_embeddings.rows {
        return Err(GenModelError::UnknownToken(row));
    }
    let e_prev = params.token_embeddings.row(row);
    let mut pre = params.prev_token_proj.matvec(e_prev);
    for ((p, c), b) in pre.iter_mut().zip(ctx_pre).zip(&params.hidden_bias) {
        *p += c + b;
    }
    let h: Vec<f64> = pre.iter().map(|&x| x.tanh()).collect();
    let logits = params.output_proj.matvec(&h);
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(GenModelError::Numerical("next-token logits".to_string()));
    }
    Ok((h, logits))
}

/// Probability vector over the content vocabulary plus EOS (by output row).
pub fn next_token_dist(
    params: &GeneratorParams,
    ctx: &ConditioningContext,
    prev: PrevToken,
) -> Result<Vec<f64>, GenModelError> {
    let ctx_pre = params.context_proj.matvec(&ctx.context_vector);
    let (_, logits) = step_logits(params, &ctx_pre, prev)?;
    Ok(softmax(&logits))
}

/// One sampled query with its exact model log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub sample_index: usize,
    pub neg_doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub doc_id: String,
    pub queries: Vec<SyntheticQuery>,
}

/// Ancestral sampling of `n` queries for one document. Each query draws its
/// own negative via `sample_negative_doc(seed, d, i)`; tokens are sampled from
/// temperature-scaled logits but the stored log-probability is the true
/// temperature-1 model log-probability of the sequence (EOS step included,
/// also when the query was truncated at `max_len`).
#[allow(clippy::too_many_arguments)]
pub fn sample_queries(
    params: &GeneratorParams,
    d: &Document,
    corpus: &Corpus,
    n: usize,
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<QuerySet, GenModelError> {
    if temperature <= 0.0 {
        return Err(GenModelError::InvalidTemperature(temperature));
    }
    let mut queries = Vec::with_capacity(n);
    for i in 0..n {
        let d_neg = crate::corpus::sample_negative_doc(corpus, d, seed, i as u64)?;
        let ctx = build_context(params, d, d_neg)?;
        let ctx_pre = params.context_proj.matvec(&ctx.context_vector);
        let mut rng = derive_rng(seed, "sample_query", &[&d.doc_id, &i.to_string()]);
        let mut tokens = Vec::new();
        let mut logprob = 0.0;
        let mut prev = PrevToken::Bos;
        loop {
            let (_, logits) = step_logits(params, &ctx_pre, prev)?;
            let model_dist = softmax(&logits);
            if tokens.len() == max_len {
                // Truncated: the sequence still ends implicitly at EOS.
                logprob += model_dist[params.eos_row()].ln();
                break;
            }
            let sample_dist = if temperature == 1.0 {
                model_dist.clone()
            } else {
                let scaled: Vec<f64> = logits.iter().map(|&x| x / temperature).collect();
                softmax(&scaled)
            };
            let row = sample_row(&sample_dist, rng.gen::<f64>());
            logprob += model_dist[row].ln();
            match params.token_of_row(row) {
                Some(t) => {
                    tokens.push(t);
                    prev = PrevToken::Token(t);
                }
                None => break, // EOS
            }
        }
        queries.push(SyntheticQuery { tokens, logprob, sample_index: i, neg_doc_id: d_neg.doc_id.clone() });
    }
    Ok(QuerySet { doc_id: d.doc_id.clone(), queries })
}

/// CDF walk; `u` uniform in [0, 1).
fn sample_row(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

/// Exact log P(query, EOS | ctx): the sum of per-step log-probabilities plus
/// the terminal EOS step.
pub fn sequence_logprob(
    params: &GeneratorParams,
    ctx: &ConditioningContext,
    query: &[TokenId],
) -> Result<f64, GenModelError> {
    let ctx_pre = params.context_proj.matvec(&ctx.context_vector);
    let mut logprob = 0.0;
    let mut prev = PrevToken::Bos;
    for &y in query {
        let row = params.output_row(y)?;
        let (_, logits) = step_logits(params, &ctx_pre, prev)?;
        logprob += softmax(&logits)[row].ln();
        prev = PrevToken::Token(y);
    }
    let (_, logits) = step_logits(params, &ctx_pre, prev)?;
    logprob += softmax(&logits)[params.eos_row()].ln();
    Ok(logprob)
}

/// Exact reverse-mode gradient of [`sequence_logprob`] with respect to every
/// parameter block, including the embeddings through the context vector and
/// the contrast weight.
pub fn logprob_grad(
    params: &GeneratorParams,
    ctx: &ConditioningContext,
    query: &[TokenId],
) -> Result<GeneratorGrad, GenModelError> {
    let mut grad = GeneratorGrad::zeros_like(params);
    let ctx_pre = params.context_proj.matvec(&ctx.context_vector);
    let mut d_ctx = vec![0.0; params.embed_dim()];

    let step = |prev: PrevToken, target_row: usize, grad: &mut GeneratorGrad, d_ctx: &mut [f64]| -> Result<(), GenModelError> {
        let (h, logits) = step_logits(params, &ctx_pre, prev)?;
        let p = softmax(&logits);
        // d logits of log p[target] = onehot(target) - p
        let mut d_logits = p;
        for x in &mut d_logits {
            *x = -*x;
        }
        d_logits[target_row] += 1.0;
        grad.output_proj.add_outer(&d_logits, &h);
        let d_h = params.output_proj.matvec_t(&d_logits);
        let d_pre: Vec<f64> = d_h.iter().zip(&h).map(|(&dh, &hv)| dh * (1.0 - hv * hv)).collect();
        for (g, d) in grad.hidden_bias.iter_mut().zip(&d_pre) {
            *g += d;
        }
        grad.context_proj.add_outer(&d_pre, &ctx.context_vector);
        let e_row = prev.embedding_row();
        grad.prev_token_proj.add_outer(&d_pre, params.token_embeddings.row(e_row));
        axpy(d_ctx, 1.0, &params.context_proj.matvec_t(&d_pre));
        let d_e_prev = params.prev_token_proj.matvec_t(&d_pre);
        axpy(grad.token_embeddings.row_mut(e_row), 1.0, &d_e_prev);
        Ok(())
    };

    let mut prev = PrevToken::Bos;
    for &y in query {
        let row = params.output_row(y)?;
        step(prev, row, &mut grad, &mut d_ctx)?;
        prev = PrevToken::Token(y);
    }
    step(prev, params.eos_row(), &mut grad, &mut d_ctx)?;

    // Context backward: ctx = mean(emb(d)) - alpha * mean(emb(d_neg)).
    let inv_d = 1.0 / ctx.doc_tokens.len() as f64;
    for &t in &ctx.doc_tokens {
        axpy(grad.token_embeddings.row_mut(t), inv_d, &d_ctx);
    }
    if let Some(neg_tokens) = &ctx.neg_tokens {
        let inv_n = 1.0 / neg_tokens.len() as f64;
        let alpha = params.contrast_weight;
        for &t in neg_tokens {
            axpy(grad.token_embeddings.row_mut(t), -alpha * inv_n, &d_ctx);
        }
        let neg_mean = mean_embedding(params, neg_tokens);
        grad.contrast_weight = -dot(&d_ctx, &neg_mean);
    }
    Ok(grad)
}
