//! Deterministic text features: hashed bag-of-words with TF-IDF weighting.
//!
//! Tokens are hashed with 64-bit FNV-1a over their UTF-8 bytes, modulo the
//! embedding dimension. Vectors are stored sparsely but always represent a
//! fixed-length vector of that dimension, either all-zero or of unit L2 norm.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::par::Execution;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn bucket_of(token: &str, dim: usize) -> u32 {
    (fnv1a64(token.as_bytes()) % dim as u64) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    /// Only `"fnv1a64"` is supported.
    pub hash: String,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 4096,
            hash: "fnv1a64".into(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return Err(Error::Config(format!("encoder dim must be in 1..=2^32-1, got {}", self.dim)));
        }
        if self.hash != "fnv1a64" {
            return Err(Error::Config(format!("unsupported hash `{}`", self.hash)));
        }
        Ok(())
    }
}

/// Lower-cased word tokens with URLs, hashtags, mentions and punctuation removed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(pub Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn is_url(word: &str) -> bool {
    let w = word.to_ascii_lowercase();
    w.starts_with("http://") || w.starts_with("https://") || w.starts_with("www.")
}

pub fn preprocess(raw: &str) -> TokenSequence {
    let tokens = raw
        .split_whitespace()
        .filter(|w| !(is_url(w) || w.starts_with('#') || w.starts_with('@')))
        .filter_map(|w| {
            let t: String = w
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect();
            (!t.is_empty()).then_some(t)
        })
        .collect();
    TokenSequence(tokens)
}

/// Sparse view of a fixed-length vector; indices strictly increasing, no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from bucket weights; the result is L2-normalized (or zero).
    fn normalized(dim: usize, weights: BTreeMap<u32, f64>) -> Self {
        let (indices, values): (Vec<u32>, Vec<f64>) =
            weights.into_iter().filter(|&(_, v)| v != 0.0).unzip();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return EmbeddingVector::zeros(dim);
        }
        let values = values.into_iter().map(|v| v / norm).collect();
        EmbeddingVector { dim, indices, values }
    }

    /// Sparse vector from `(index, value)` pairs; zeros are dropped. No normalization.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, v) in pairs {
            if i as usize >= dim {
                return Err(Error::Contract(format!("index {i} out of range for dim {dim}")));
            }
            *map.entry(i).or_insert(0.0) += v;
        }
        let (indices, values) = map.into_iter().filter(|&(_, v)| v != 0.0).unzip();
        Ok(EmbeddingVector { dim, indices, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// Inverse document frequencies per bucket plus the training vocabulary.
///
/// `idf(b) = ln((1 + N) / (1 + df(b))) + 1` where `N` is the number of fitted
/// documents. Tokens outside the vocabulary are dropped at encode time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub dim: usize,
    pub hash: String,
    pub documents: usize,
    pub idf: BTreeMap<u32, f64>,
    pub vocabulary: BTreeSet<String>,
}

impl IdfTable {
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a TokenSequence>, dim: usize) -> Self {
        let mut df: BTreeMap<u32, u64> = BTreeMap::new();
        let mut vocabulary = BTreeSet::new();
        let mut documents = 0usize;
        for doc in docs {
            documents += 1;
            let buckets: BTreeSet<u32> = doc.0.iter().map(|t| bucket_of(t, dim)).collect();
            for b in buckets {
                *df.entry(b).or_insert(0) += 1;
            }
            vocabulary.extend(doc.0.iter().cloned());
        }
        let n = documents as f64;
        let idf = df
            .into_iter()
            .map(|(b, d)| (b, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
            .collect();
        IdfTable {
            dim,
            hash: "fnv1a64".into(),
            documents,
            idf,
            vocabulary,
        }
    }

    /// A hand-built table, mostly for tests and fixtures.
    pub fn from_parts(
        dim: usize,
        idf: BTreeMap<u32, f64>,
        vocabulary: impl IntoIterator<Item = String>,
    ) -> Self {
        IdfTable {
            dim,
            hash: "fnv1a64".into(),
            documents: 0,
            idf,
            vocabulary: vocabulary.into_iter().collect(),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocabulary.contains(token)
    }
}

/// Raw term counts times IDF, over in-vocabulary tokens, L2-normalized.
pub fn encode_news(tokens: &TokenSequence, idf: &IdfTable) -> EmbeddingVector {
    let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
    for t in tokens.0.iter().filter(|t| idf.contains(t)) {
        *tf.entry(bucket_of(t, idf.dim)).or_insert(0.0) += 1.0;
    }
    let weights = tf
        .into_iter()
        .map(|(b, c)| (b, c * idf.idf.get(&b).copied().unwrap_or(0.0)))
        .collect();
    EmbeddingVector::normalized(idf.dim, weights)
}

/// Unweighted mean of the per-comment encodings, re-normalized.
pub fn encode_comments(comments: &[TokenSequence], idf: &IdfTable) -> EmbeddingVector {
    if comments.is_empty() {
        return EmbeddingVector::zeros(idf.dim);
    }
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for c in comments {
        for (i, v) in encode_news(c, idf).iter() {
            *acc.entry(i as u32).or_insert(0.0) += v;
        }
    }
    let m = comments.len() as f64;
    let mean = acc.into_iter().map(|(i, v)| (i, v / m)).collect();
    EmbeddingVector::normalized(idf.dim, mean)
}

/// Tokenized news text and comments of one news item.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenizedNews {
    pub text: TokenSequence,
    pub comments: Vec<TokenSequence>,
}

/// Text and comment encodings of one news item.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsEncoding {
    pub news: EmbeddingVector,
    pub comments: EmbeddingVector,
}

pub fn tokenize_corpus(corpus: &Corpus, exec: Execution) -> Vec<TokenizedNews> {
    let pairs: Vec<(&str, &[String])> = corpus
        .news
        .iter()
        .zip(&corpus.comments)
        .map(|(n, c)| (n.text.as_str(), c.comments.as_slice()))
        .collect();
    exec.map(&pairs, |&(text, comments)| TokenizedNews {
        text: preprocess(text),
        comments: comments.iter().map(|c| preprocess(c)).collect(),
    })
}

/// Fit the IDF table on the news texts and comments of `train_rows`.
pub fn fit_idf(tokenized: &[TokenizedNews], train_rows: &[usize], dim: usize) -> IdfTable {
    IdfTable::fit(
        train_rows
            .iter()
            .flat_map(|&i| std::iter::once(&tokenized[i].text).chain(&tokenized[i].comments)),
        dim,
    )
}

pub fn encode_all(tokenized: &[TokenizedNews], idf: &IdfTable, exec: Execution) -> Vec<NewsEncoding> {
    exec.map(tokenized, |t| NewsEncoding {
        news: encode_news(&t.text, idf),
        comments: encode_comments(&t.comments, idf),
    })
}
