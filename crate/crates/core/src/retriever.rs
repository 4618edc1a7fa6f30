//! Dense bi-encoder: average-pooled token embeddings, cosine similarity, and
//! contrastive training over synthetic positive pairs.
//!
//! The batch loss for a query is the InfoNCE objective over its mined hard
//! negatives plus the positives of the other in-batch examples (deduplicated
//! by doc id). Gradients are exact; training is plain mini-batch descent with
//! seeded shuffling so runs are bit-reproducible.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TokenId};
use crate::linalg::{axpy, dot, norm, Mat};
use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("empty token sequence")]
    EmptyInput,
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("doc id `{0}` not present in the corpus")]
    UnresolvableDoc(String),
    #[error("invalid training example: {0}")]
    InvalidExample(String),
    #[error("non-finite value in {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Dense embedder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderParams {
    /// `(content_vocab + reserved) x embed_dim`.
    pub token_embeddings: Mat,
    /// `embed_dim x embed_dim`, initialized to identity.
    pub projection: Mat,
    pub seed: u64,
}

impl EmbedderParams {
    pub fn init(vocab_total_ids: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = derive_rng(seed, "embedder_init", &[]);
        let token_embeddings = Mat::from_fn(vocab_total_ids, embed_dim, |_, _| rng.gen_range(-0.1..0.1));
        let projection = Mat::from_fn(embed_dim, embed_dim, |r, c| if r == c { 1.0 } else { 0.0 });
        EmbedderParams { token_embeddings, projection, seed }
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.rows
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.token_embeddings.data);
        out.extend_from_slice(&self.projection.data);
        out
    }

    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut out = self.clone();
        let n = self.token_embeddings.data.len();
        out.token_embeddings.data = flat[..n].to_vec();
        out.projection.data = flat[n..].to_vec();
        out
    }

    pub fn apply_grad(&mut self, grad: &EmbedderGrad, scale: f64) {
        for (a, g) in self.token_embeddings.data.iter_mut().zip(&grad.token_embeddings.data) {
            *a += scale * g;
        }
        for (a, g) in self.projection.data.iter_mut().zip(&grad.projection.data) {
            *a += scale * g;
        }
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), RetrieverError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self, RetrieverError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderGrad {
    pub token_embeddings: Mat,
    pub projection: Mat,
}

impl EmbedderGrad {
    pub fn zeros_like(params: &EmbedderParams) -> Self {
        EmbedderGrad {
            token_embeddings: Mat::zeros(params.token_embeddings.rows, params.token_embeddings.cols),
            projection: Mat::zeros(params.projection.rows, params.projection.cols),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.token_embeddings.data);
        out.extend_from_slice(&self.projection.data);
        out
    }
}

/// One retriever training instance: a query, its positive document, and its
/// mined hard negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub query: Vec<TokenId>,
    pub positive: String,
    pub negatives: Vec<String>,
}

impl TrainExample {
    pub fn validate(&self) -> Result<(), RetrieverError> {
        if self.query.is_empty() {
            return Err(RetrieverError::InvalidExample("empty query".to_string()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &self.negatives {
            if n == &self.positive {
                return Err(RetrieverError::InvalidExample(format!(
                    "positive `{}` repeated among negatives",
                    self.positive
                )));
            }
            if !seen.insert(n) {
                return Err(RetrieverError::InvalidExample(format!("duplicate negative `{n}`")));
            }
        }
        Ok(())
    }
}

/// `projection * mean(token embeddings)`.
pub fn embed(params: &EmbedderParams, tokens: &[TokenId]) -> Result<Vec<f64>, RetrieverError> {
    if tokens.is_empty() {
        return Err(RetrieverError::EmptyInput);
    }
    let mut mean = vec![0.0; params.token_embeddings.cols];
    for &t in tokens {
        axpy(&mut mean, 1.0, params.token_embeddings.row(t));
    }
    let inv = 1.0 / tokens.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    Ok(params.projection.matvec(&mean))
}

/// Cosine similarity.
pub fn similarity(u: &[f64], v: &[f64]) -> Result<f64, RetrieverError> {
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrieverError::ZeroVector);
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Contrastive loss with raw cosine scores (no temperature).
pub fn info_nce_loss(q: &[f64], pos: &[f64], negs: &[Vec<f64>]) -> Result<f64, RetrieverError> {
    info_nce_loss_scaled(q, pos, negs, 1.0)
}

/// Contrastive loss with cosines divided by `temperature`.
pub fn info_nce_loss_scaled(
    q: &[f64],
    pos: &[f64],
    negs: &[Vec<f64>],
    temperature: f64,
) -> Result<f64, RetrieverError> {
    let s_pos = similarity(q, pos)? / temperature;
    let mut scores = Vec::with_capacity(negs.len() + 1);
    scores.push(s_pos);
    for n in negs {
        scores.push(similarity(q, n)? / temperature);
    }
    // -log(e^{s+} / sum e^{s}) via a max-shifted log-sum-exp. The exp terms
    // are summed in sorted order so the result is exactly permutation
    // invariant in the negatives.
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut terms: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    terms.sort_by(|a, b| a.partial_cmp(b).expect("finite exp terms"));
    let lse = m + terms.iter().sum::<f64>().ln();
    Ok(lse - s_pos)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrieverTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Cosine divisor in the loss; 1.0 reproduces the raw objective.
    pub temperature: f64,
}

impl Default for RetrieverTrainConfig {
    fn default() -> Self {
        RetrieverTrainConfig { batch_size: 16, learning_rate: 1e-2, epochs: 10, seed: 0, temperature: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Per-query effective negative ids: the example's own hard negatives plus
/// the positives of the other in-batch examples, deduplicated by doc id and
/// never containing the query's own positive.
pub fn effective_negatives(batch: &[&TrainExample]) -> Vec<Vec<String>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut seen: std::collections::HashSet<&str> = std::collections::HashSet::new();
            seen.insert(ex.positive.as_str());
            let mut negs = Vec::new();
            for n in &ex.negatives {
                if seen.insert(n.as_str()) {
                    negs.push(n.clone());
                }
            }
            for (j, other) in batch.iter().enumerate() {
                if j != i && seen.insert(other.positive.as_str()) {
                    negs.push(other.positive.clone());
                }
            }
            negs
        })
        .collect()
}

/// Mean InfoNCE loss of one batch and its exact gradient.
pub fn batch_loss_grad(
    params: &EmbedderParams,
    batch: &[&TrainExample],
    corpus: &Corpus,
    temperature: f64,
) -> Result<(f64, EmbedderGrad), RetrieverError> {
    struct Slot {
        tokens: Vec<TokenId>,
        vec: Vec<f64>,
        d_vec: Vec<f64>,
    }

    let mut slots: Vec<Slot> = Vec::new();
    let mut doc_slot: HashMap<String, usize> = HashMap::new();
    let mut slot_for_doc = |doc_id: &str, slots: &mut Vec<Slot>| -> Result<usize, RetrieverError> {
        if let Some(&i) = doc_slot.get(doc_id) {
            return Ok(i);
        }
        let doc = corpus
            .get(doc_id)
            .ok_or_else(|| RetrieverError::UnresolvableDoc(doc_id.to_string()))?;
        let vec = embed(params, &doc.tokens)?;
        let dim = vec.len();
        slots.push(Slot { tokens: doc.tokens.clone(), vec, d_vec: vec![0.0; dim] });
        doc_slot.insert(doc_id.to_string(), slots.len() - 1);
        Ok(slots.len() - 1)
    };

    let negatives = effective_negatives(batch);
    let mut per_query: Vec<(usize, usize, Vec<usize>)> = Vec::with_capacity(batch.len());
    for (ex, negs) in batch.iter().zip(&negatives) {
        ex.validate()?;
        let q_vec = embed(params, &ex.query)?;
        let dim = q_vec.len();
        slots.push(Slot { tokens: ex.query.clone(), vec: q_vec, d_vec: vec![0.0; dim] });
        let q_slot = slots.len() - 1;
        let p_slot = slot_for_doc(&ex.positive, &mut slots)?;
        let n_slots = negs
            .iter()
            .map(|n| slot_for_doc(n, &mut slots))
            .collect::<Result<Vec<_>, _>>()?;
        per_query.push((q_slot, p_slot, n_slots));
    }

    // d cos(u,v)/du = v/(|u||v|) - cos * u/|u|^2
    let cos_backward = |u: &[f64], v: &[f64], c: f64, w: f64, du: &mut [f64], dv: &mut [f64]| {
        let nu = norm(u);
        let nv = norm(v);
        let inv = 1.0 / (nu * nv);
        for k in 0..u.len() {
            du[k] += w * (v[k] * inv - c * u[k] / (nu * nu));
            dv[k] += w * (u[k] * inv - c * v[k] / (nv * nv));
        }
    };

    let inv_batch = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;
    for (q_slot, p_slot, n_slots) in &per_query {
        let q = slots[*q_slot].vec.clone();
        let pos = slots[*p_slot].vec.clone();
        let c_pos = similarity(&q, &pos)?;
        let mut cosines = vec![c_pos];
        for &ns in n_slots {
            cosines.push(similarity(&q, &slots[ns].vec)?);
        }
        let scores: Vec<f64> = cosines.iter().map(|c| c / temperature).collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        total_loss += (m + z.ln()) - scores[0];

        // dL/ds_j = p_j - [j == positive], then ds/dcos = 1/temperature.
        for (j, (&s, &c)) in scores.iter().zip(&cosines).enumerate() {
            let mut w = (s - m).exp() / z;
            if j == 0 {
                w -= 1.0;
            }
            w *= inv_batch / temperature;
            let v_slot = if j == 0 { *p_slot } else { n_slots[j - 1] };
            let v = slots[v_slot].vec.clone();
            let mut du = vec![0.0; q.len()];
            let mut dv = vec![0.0; q.len()];
            cos_backward(&q, &v, c, w, &mut du, &mut dv);
            axpy(&mut slots[*q_slot].d_vec, 1.0, &du);
            axpy(&mut slots[v_slot].d_vec, 1.0, &dv);
        }
    }

    // Backprop each slot: vec = projection * mean(emb rows).
    let mut grad = EmbedderGrad::zeros_like(params);
    for slot in &slots {
        let mut mean = vec![0.0; params.token_embeddings.cols];
        for &t in &slot.tokens {
            axpy(&mut mean, 1.0, params.token_embeddings.row(t));
        }
        let inv = 1.0 / slot.tokens.len() as f64;
        for v in &mut mean {
            *v *= inv;
        }
        grad.projection.add_outer(&slot.d_vec, &mean);
        let d_mean = params.projection.matvec_t(&slot.d_vec);
        for &t in &slot.tokens {
            axpy(grad.token_embeddings.row_mut(t), inv, &d_mean);
        }
    }

    let loss = total_loss * inv_batch;
    if !loss.is_finite() {
        return Err(RetrieverError::Numerical("batch loss".to_string()));
    }
    Ok((loss, grad))
}

/// Mini-batch gradient descent on the in-batch InfoNCE objective. Returns the
/// trained parameters and a per-epoch mean-loss trace.
pub fn train_retriever(
    params: &EmbedderParams,
    dataset: &[TrainExample],
    corpus: &Corpus,
    config: &RetrieverTrainConfig,
) -> Result<(EmbedderParams, Vec<EpochLoss>), RetrieverError> {
    if dataset.is_empty() {
        return Err(RetrieverError::EmptyDataset);
    }
    for ex in dataset {
        ex.validate()?;
        if corpus.get(&ex.positive).is_none() {
            return Err(RetrieverError::UnresolvableDoc(ex.positive.clone()));
        }
        for n in &ex.negatives {
            if corpus.get(n).is_none() {
                return Err(RetrieverError::UnresolvableDoc(n.clone()));
            }
        }
    }
    let mut trained = params.clone();
    let mut trace = Vec::with_capacity(config.epochs);
    let batch_size = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut rng = derive_rng(config.seed, "retriever_epoch", &[&epoch.to_string()]);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, grad) = batch_loss_grad(&trained, &batch, corpus, config.temperature)?;
            trained.apply_grad(&grad, -config.learning_rate);
            epoch_loss += loss;
            batches += 1;
        }
        trace.push(EpochLoss { epoch, mean_loss: epoch_loss / batches as f64 });
    }
    Ok((trained, trace))
}

/// Precomputed document embeddings for a corpus, in corpus order.
#[derive(Debug, Clone)]
pub struct CorpusEmbeddings {
    pub doc_ids: Vec<String>,
    pub dim: usize,
    /// Row-major `len(doc_ids) x dim`.
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingSidecar {
    rows: usize,
    cols: usize,
    doc_ids: Vec<String>,
}

impl CorpusEmbeddings {
    pub fn compute(params: &EmbedderParams, corpus: &Corpus) -> Result<Self, RetrieverError> {
        let dim = params.embed_dim();
        let mut data = Vec::with_capacity(corpus.len() * dim);
        let mut doc_ids = Vec::with_capacity(corpus.len());
        for doc in corpus.documents() {
            data.extend(embed(params, &doc.tokens)?);
            doc_ids.push(doc.doc_id.clone());
        }
        Ok(CorpusEmbeddings { doc_ids, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Binary matrix (little-endian f64) with a JSON sidecar holding dims and
    /// doc id order.
    pub fn save(&self, bin_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<(), RetrieverError> {
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(bin_path, bytes)?;
        let sidecar = EmbeddingSidecar {
            rows: self.doc_ids.len(),
            cols: self.dim,
            doc_ids: self.doc_ids.clone(),
        };
        fs::write(sidecar_path, serde_json::to_string(&sidecar)?)?;
        Ok(())
    }

    pub fn load(bin_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<Self, RetrieverError> {
        let sidecar: EmbeddingSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
        let bytes = fs::read(bin_path)?;
        if bytes.len() != sidecar.rows * sidecar.cols * 8 {
            return Err(RetrieverError::Numerical("embedding matrix size mismatch".to_string()));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(CorpusEmbeddings { doc_ids: sidecar.doc_ids, dim: sidecar.cols, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, RESERVED_IDS};
    use crate::gradcheck::{central_difference, max_rel_error};

    fn tiny_corpus() -> Corpus {
        Corpus::from_records(vec![
            ("d0".into(), "ant bee cat dog".into()),
            ("d1".into(), "bee cat".into()),
            ("d2".into(), "dog emu fox".into()),
            ("d3".into(), "fox gnu".into()),
            ("d4".into(), "ant gnu hen".into()),
        ])
        .unwrap()
    }

    fn params(corpus: &Corpus, seed: u64) -> EmbedderParams {
        EmbedderParams::init(corpus.vocab().total_ids(), 4, seed)
    }

    #[test]
    fn single_token_with_identity_projection_is_its_row() {
        let corpus = tiny_corpus();
        let p = params(&corpus, 1);
        let t = RESERVED_IDS; // first content token
        let v = embed(&p, &[t]).unwrap();
        assert_eq!(v, p.token_embeddings.row(t).to_vec());
    }

    #[test]
    fn opposite_embeddings_cancel_to_zero() {
        let corpus = tiny_corpus();
        let mut p = params(&corpus, 2);
        let a = RESERVED_IDS;
        let b = RESERVED_IDS + 1;
        let row: Vec<f64> = p.token_embeddings.row(a).to_vec();
        for (x, r) in p.token_embeddings.row_mut(b).iter_mut().zip(&row) {
            *x = -r;
        }
        let v = embed(&p, &[a, b]).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
        assert!(matches!(similarity(&v, &row), Err(RetrieverError::ZeroVector)));
    }

    #[test]
    fn embedding_matches_mean_then_project_arithmetic() {
        let corpus = tiny_corpus();
        let mut p = params(&corpus, 3);
        // Non-identity projection so the matvec is exercised.
        let mut rng = derive_rng(3, "test_proj", &[]);
        for x in &mut p.projection.data {
            *x = rng.gen_range(-0.5..0.5);
        }
        let tokens = [RESERVED_IDS, RESERVED_IDS + 2, RESERVED_IDS + 3, RESERVED_IDS + 1];
        let got = embed(&p, &tokens).unwrap();
        for k in 0..p.embed_dim() {
            let mut want = 0.0;
            for j in 0..p.embed_dim() {
                let mean_j =
                    tokens.iter().map(|&t| p.token_embeddings.row(t)[j]).sum::<f64>() / tokens.len() as f64;
                want += p.projection.row(k)[j] * mean_j;
            }
            assert!((got[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let corpus = tiny_corpus();
        let p = params(&corpus, 4);
        assert!(matches!(embed(&p, &[]), Err(RetrieverError::EmptyInput)));
    }

    #[test]
    fn cosine_identities() {
        let x = [0.3, -0.7, 2.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((similarity(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((similarity(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        let got = similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((got - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matched_negative_gives_ln_two() {
        let q = [1.0, 0.0];
        let pos = [1.0, 1.0];
        let neg = vec![vec![1.0, 1.0]];
        let loss = info_nce_loss(&q, &pos, &neg).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn no_negatives_means_zero_loss() {
        let q = [0.2, 0.5];
        let pos = [0.4, 0.1];
        assert_eq!(info_nce_loss(&q, &pos, &[]).unwrap(), 0.0);
    }

    #[test]
    fn loss_matches_direct_evaluation() {
        // cos(q,d+) = 0.9, negatives at 0.1 and -0.3 via hand-built vectors.
        let q = [1.0, 0.0];
        let mk = |c: f64| vec![c, (1.0 - c * c).sqrt()];
        let pos = mk(0.9);
        let negs = vec![mk(0.1), mk(-0.3)];
        let loss = info_nce_loss(&q, &pos, &negs).unwrap();
        let want = -(0.9f64.exp() / (0.9f64.exp() + 0.1f64.exp() + (-0.3f64).exp())).ln();
        assert!((loss - want).abs() < 1e-12);
        assert!((loss - 0.5599).abs() < 5e-4);
    }

    #[test]
    fn permuting_negatives_leaves_the_loss_unchanged() {
        let mut rng = derive_rng(5, "perm", &[]);
        let rand_vec = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        for _ in 0..50 {
            let q = rand_vec(&mut rng);
            let pos = rand_vec(&mut rng);
            let mut negs: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng)).collect();
            let a = info_nce_loss(&q, &pos, &negs).unwrap();
            negs.reverse();
            negs.swap(0, 2);
            let b = info_nce_loss(&q, &pos, &negs).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn extra_negatives_strictly_increase_the_loss() {
        let mut rng = derive_rng(6, "extra_neg", &[]);
        let rand_vec = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        for _ in 0..100 {
            let q = rand_vec(&mut rng);
            let pos = rand_vec(&mut rng);
            let mut negs: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng)).collect();
            let before = info_nce_loss(&q, &pos, &negs).unwrap();
            negs.push(rand_vec(&mut rng));
            let after = info_nce_loss(&q, &pos, &negs).unwrap();
            assert!(after > before);
        }
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let corpus = tiny_corpus();
        let p = params(&corpus, 7);
        let dataset = vec![
            TrainExample {
                query: corpus.get("d1").unwrap().tokens.clone(),
                positive: "d1".into(),
                negatives: vec!["d2".into(), "d3".into()],
            },
            TrainExample {
                query: corpus.get("d4").unwrap().tokens.clone(),
                positive: "d4".into(),
                negatives: vec!["d0".into()],
            },
        ];
        let batch: Vec<&TrainExample> = dataset.iter().collect();
        let (_, grad) = batch_loss_grad(&p, &batch, &corpus, 1.0).unwrap();
        let flat = p.to_flat();
        assert!(flat.len() <= 2000);
        let numeric = central_difference(&flat, 1e-5, |x| {
            let probe = p.with_flat(x);
            batch_loss_grad(&probe, &batch, &corpus, 1.0).unwrap().0
        });
        let err = max_rel_error(&grad.to_flat(), &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn in_batch_negative_counts_are_hard_plus_batch_minus_one() {
        let corpus = tiny_corpus();
        let dataset: Vec<TrainExample> = ["d0", "d1", "d2", "d3"]
            .iter()
            .map(|id| TrainExample {
                query: corpus.get(id).unwrap().tokens.clone(),
                positive: id.to_string(),
                negatives: vec!["d4".to_string()],
            })
            .collect();
        let batch: Vec<&TrainExample> = dataset.iter().collect();
        let negs = effective_negatives(&batch);
        for (i, n) in negs.iter().enumerate() {
            assert_eq!(n.len(), 1 + (batch.len() - 1), "query {i}");
            assert!(!n.contains(&batch[i].positive));
        }
    }

    #[test]
    fn zero_epochs_leave_parameters_unchanged() {
        let corpus = tiny_corpus();
        let p = params(&corpus, 8);
        let dataset = vec![TrainExample {
            query: corpus.get("d0").unwrap().tokens.clone(),
            positive: "d0".into(),
            negatives: vec!["d1".into()],
        }];
        let config = RetrieverTrainConfig { epochs: 0, ..Default::default() };
        let (trained, trace) = train_retriever(&p, &dataset, &corpus, &config).unwrap();
        assert_eq!(trained, p);
        assert!(trace.is_empty());
    }

    #[test]
    fn one_small_step_decreases_the_loss() {
        let corpus = tiny_corpus();
        let p = params(&corpus, 9);
        let dataset = vec![TrainExample {
            query: corpus.get("d2").unwrap().tokens.clone(),
            positive: "d2".into(),
            negatives: vec!["d0".into(), "d4".into()],
        }];
        let batch: Vec<&TrainExample> = dataset.iter().collect();
        let (before, _) = batch_loss_grad(&p, &batch, &corpus, 1.0).unwrap();
        let config =
            RetrieverTrainConfig { epochs: 1, learning_rate: 1e-3, batch_size: 1, seed: 1, temperature: 1.0 };
        let (trained, _) = train_retriever(&p, &dataset, &corpus, &config).unwrap();
        let (after, _) = batch_loss_grad(&trained, &batch, &corpus, 1.0).unwrap();
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let corpus = tiny_corpus();
        let p = params(&corpus, 10);
        let err = train_retriever(&p, &[], &corpus, &RetrieverTrainConfig::default()).unwrap_err();
        assert!(matches!(err, RetrieverError::EmptyDataset));
    }

    #[test]
    fn unresolvable_doc_is_rejected() {
        let corpus = tiny_corpus();
        let p = params(&corpus, 11);
        let dataset = vec![TrainExample {
            query: corpus.get("d0").unwrap().tokens.clone(),
            positive: "missing".into(),
            negatives: vec![],
        }];
        let err = train_retriever(&p, &dataset, &corpus, &RetrieverTrainConfig::default()).unwrap_err();
        assert!(matches!(err, RetrieverError::UnresolvableDoc(ref d) if d == "missing"));
    }

    #[test]
    fn embedding_dump_round_trips() {
        let corpus = tiny_corpus();
        let p = params(&corpus, 12);
        let emb = CorpusEmbeddings::compute(&p, &corpus).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("emb.f64");
        let side = dir.path().join("emb.json");
        emb.save(&bin, &side).unwrap();
        let loaded = CorpusEmbeddings::load(&bin, &side).unwrap();
        assert_eq!(loaded.doc_ids, emb.doc_ids);
        assert_eq!(loaded.dim, emb.dim);
        let a: Vec<u64> = emb.data.iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = loaded.data.iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }
}
