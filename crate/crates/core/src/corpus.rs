//! Document collections: ingestion, vocabulary, pool sampling.
//!
//! A [`Corpus`] is immutable after load. The vocabulary is corpus-derived and
//! frozen: content tokens are sorted lexicographically and assigned ids after
//! the reserved ids, so two loads of the same file produce identical id maps.
//! All sampling here is a pure function of explicit seeds.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_rng;

pub type TokenId = usize;

/// End-of-sequence id, also used as the virtual BOS embedding row.
pub const EOS_ID: TokenId = 0;
/// Separator id. Never occurs in corpus-derived documents; unknown tokens at
/// query time map here (`UNK_ID`).
pub const SEP_ID: TokenId = 1;
pub const UNK_ID: TokenId = SEP_ID;
/// Number of reserved ids before the first content token.
pub const RESERVED_IDS: usize = 2;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate doc id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("document `{id}` is empty after tokenization (line {line})")]
    EmptyDocument { id: String, line: usize },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("pool of size {requested} requested but only {available} documents are eligible")]
    PoolExhausted { requested: usize, available: usize },
    #[error("no negative document available (singleton corpus)")]
    NoNegativeAvailable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercase and split on Unicode whitespace/punctuation boundaries: tokens
/// are maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Frozen token string <-> id map. Ids are contiguous from 0 with the
/// reserved ids first, then content tokens in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn from_tokens(distinct: BTreeSet<String>) -> Self {
        let tokens: Vec<String> = distinct.into_iter().collect();
        let mut vocab = Vocabulary { tokens, ids: HashMap::new() };
        vocab.rebuild_index();
        vocab
    }

    fn rebuild_index(&mut self) {
        self.ids = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + RESERVED_IDS))
            .collect();
    }

    /// Restore the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.rebuild_index();
    }

    /// Number of content tokens (reserved ids excluded).
    pub fn content_len(&self) -> usize {
        self.tokens.len()
    }

    /// Size of the full id space: content tokens plus reserved ids.
    pub fn total_ids(&self) -> usize {
        self.tokens.len() + RESERVED_IDS
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    /// Id for a token, mapping unknown tokens to the reserved `UNK_ID`.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id_of(token).unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: TokenId) -> Option<&str> {
        match id {
            EOS_ID => Some("<eos>"),
            SEP_ID => Some("<sep>"),
            _ => self.tokens.get(id - RESERVED_IDS).map(String::as_str),
        }
    }

    pub fn is_content(&self, id: TokenId) -> bool {
        (RESERVED_IDS..self.total_ids()).contains(&id)
    }

    /// Tokenize and encode, mapping out-of-vocabulary tokens to `UNK_ID`.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id_or_unk(t)).collect()
    }

    /// Space-joined token strings.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", self.token_of(id).unwrap_or("<bad>"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<TokenId>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    text: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    vocab: Vocabulary,
    positions: HashMap<String, usize>,
}

impl Corpus {
    /// Build from `(id, text)` records in order; the vocabulary is derived
    /// from the distinct tokens of all records.
    pub fn from_records(records: Vec<(String, String)>) -> Result<Self, CorpusError> {
        let mut distinct = BTreeSet::new();
        let mut tokenized = Vec::with_capacity(records.len());
        let mut seen: HashSet<String> = HashSet::new();
        for (line0, (id, text)) in records.into_iter().enumerate() {
            let line = line0 + 1;
            if !seen.insert(id.clone()) {
                return Err(CorpusError::DuplicateId { id, line });
            }
            let tokens = tokenize(&text);
            if tokens.is_empty() {
                return Err(CorpusError::EmptyDocument { id, line });
            }
            for t in &tokens {
                distinct.insert(t.clone());
            }
            tokenized.push((id, text, tokens));
        }
        let vocab = Vocabulary::from_tokens(distinct);
        let documents: Vec<Document> = tokenized
            .into_iter()
            .map(|(doc_id, text, toks)| Document {
                tokens: toks.iter().map(|t| vocab.id_of(t).expect("token in vocab")).collect(),
                doc_id,
                text,
            })
            .collect();
        let positions = documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i))
            .collect();
        Ok(Corpus { documents, vocab, positions })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn doc(&self, index: usize) -> &Document {
        &self.documents[index]
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.positions.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.positions.get(doc_id).copied()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

/// Load a corpus from JSONL (`{"id": ..., "text": ...}` per line) or TSV
/// (`id<TAB>text` per line), both UTF-8.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let content = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (line0, line) in content.lines().enumerate() {
        let line_no = line0 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = match format {
            CorpusFormat::Jsonl => {
                let rec: RawRecord =
                    serde_json::from_str(line).map_err(|e| CorpusError::ParseError {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                (rec.id, rec.text)
            }
            CorpusFormat::Tsv => match line.split_once('\t') {
                Some((id, text)) => (id.to_string(), text.to_string()),
                None => {
                    return Err(CorpusError::ParseError {
                        line: line_no,
                        message: "expected id<TAB>text".to_string(),
                    })
                }
            },
        };
        records.push((id, text));
    }
    Corpus::from_records(records)
}

/// Write the corpus back out; canonical JSONL input round-trips byte-identically.
pub fn write_corpus(
    corpus: &Corpus,
    path: impl AsRef<Path>,
    format: CorpusFormat,
) -> Result<(), CorpusError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for doc in &corpus.documents {
        match format {
            CorpusFormat::Jsonl => {
                let rec = RawRecord { id: doc.doc_id.clone(), text: doc.text.clone() };
                serde_json::to_writer(&mut w, &rec).map_err(|e| CorpusError::ParseError {
                    line: 0,
                    message: e.to_string(),
                })?;
                writeln!(w)?;
            }
            CorpusFormat::Tsv => writeln!(w, "{}\t{}", doc.doc_id, doc.text)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// A reproducible document pool: a uniform sample without replacement, stored
/// in draw order so prefixes of the pool are themselves uniform subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocPool {
    pub doc_ids: Vec<String>,
    pub seed: u64,
}

impl DocPool {
    pub fn id_set(&self) -> HashSet<&str> {
        self.doc_ids.iter().map(String::as_str).collect()
    }
}

/// Uniform sample of `size` documents from `corpus \ exclude`, deterministic
/// given `(seed, corpus order, exclude)` and independent of the exclusion
/// set's iteration order.
pub fn sample_pool(
    corpus: &Corpus,
    size: usize,
    seed: u64,
    exclude: &HashSet<String>,
) -> Result<DocPool, CorpusError> {
    let mut candidates: Vec<usize> = (0..corpus.len())
        .filter(|&i| !exclude.contains(&corpus.doc(i).doc_id))
        .collect();
    if size > candidates.len() {
        return Err(CorpusError::PoolExhausted { requested: size, available: candidates.len() });
    }
    let mut rng = derive_rng(seed, "sample_pool", &[]);
    // Partial Fisher-Yates: the first `size` slots are the draw order.
    for i in 0..size {
        let j = rng.gen_range(i..candidates.len());
        candidates.swap(i, j);
    }
    let doc_ids = candidates[..size]
        .iter()
        .map(|&i| corpus.doc(i).doc_id.clone())
        .collect();
    Ok(DocPool { doc_ids, seed })
}

/// Uniform draw from `corpus \ {d}`, deterministic given
/// `(seed, d.doc_id, draw_index)`.
pub fn sample_negative_doc<'c>(
    corpus: &'c Corpus,
    d: &Document,
    seed: u64,
    draw_index: u64,
) -> Result<&'c Document, CorpusError> {
    let skip = corpus.position(&d.doc_id);
    let available = corpus.len() - usize::from(skip.is_some());
    if available == 0 {
        return Err(CorpusError::NoNegativeAvailable);
    }
    let mut rng = derive_rng(seed, "neg_doc", &[&d.doc_id, &draw_index.to_string()]);
    let k = rng.gen_range(0..available);
    let idx = match skip {
        Some(p) if k >= p => k + 1,
        _ => k,
    };
    Ok(corpus.doc(idx))
}
