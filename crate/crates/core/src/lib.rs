//! Ranking-aligned synthetic query generation for dense retriever training.
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] — load or synthesize a document collection and sample the
//!    disjoint document pools used for alignment and generation.
//! 2. [`genmodel`] — a tiny conditional autoregressive generator: sampling,
//!    exact sequence log-probabilities, and analytic parameter gradients.
//! 3. [`rewards`] / [`preference`] — score sampled queries with a pluggable
//!    reward and build (document, preferred, rejected) triples.
//! 4. [`dpo`] — align the generator against a frozen reference with the
//!    preference-optimization loss.
//! 5. [`retriever`] / [`mining`] — train a dense embedder with a contrastive
//!    loss over mined hard negatives and in-batch negatives.
//! 6. [`eval`] — MRR / nDCG / recall over TREC-style runs and qrels, reward
//!    histograms, and the data-scaling runner.
//!
//! [`simlab`] provides topic-structured synthetic corpora with a ground-truth
//! relevance oracle so every end-to-end claim is checkable offline, and
//! [`pipeline`] wires the stages behind a declarative JSON config with a
//! content-hash manifest for reproducibility.

pub mod corpus;
pub mod dpo;
pub mod eval;
pub mod genmodel;
pub mod gradcheck;
pub mod linalg;
pub mod mining;
pub mod pipeline;
pub mod preference;
pub mod retriever;
pub mod rewards;
pub mod rng;
pub mod simlab;
