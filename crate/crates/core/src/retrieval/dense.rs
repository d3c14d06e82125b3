//! Exhaustive inner-product search over unit vectors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, TokenizerConfig, TruncationLimits};
use super::{rank_documents, RankedList, RetrievalError, Retriever};
use crate::data::Corpus;

/// Maps text to a fixed-dimension vector. Implementations should return
/// unit-norm vectors (or all zeros for text with no content).
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_query(&self, text: &str) -> Vec<f64>;
    fn embed_passage(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing of analyzed tokens, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub tokenizer: TokenizerConfig,
    pub limits: TruncationLimits,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEmbedder {
            dim,
            seed,
            tokenizer: TokenizerConfig::default(),
            limits: TruncationLimits::default(),
        }
    }

    fn fnv1a(&self, token: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for b in token.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// Bucket and sign a token is hashed to.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = self.fnv1a(token);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % self.dim as u64) as usize, sign)
    }

    fn embed_tokens(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for t in tokens {
            let (i, s) = self.slot(t);
            v[i] += s;
        }
        normalize(&mut v);
        v
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_query(&self, text: &str) -> Vec<f64> {
        self.embed_tokens(&tokenize(text, &self.tokenizer, self.limits.query_tokens))
    }

    fn embed_passage(&self, text: &str) -> Vec<f64> {
        self.embed_tokens(&tokenize(text, &self.tokenizer, self.limits.passage_tokens))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex<E = HashEmbedder> {
    pub embedder: E,
    pub dim: usize,
    /// Ordinal → passage id, ascending id order.
    pub ids: Vec<String>,
    /// Row-major, `ids.len() * dim`.
    pub vectors: Vec<f64>,
}

impl<E: Embedder> DenseIndex<E> {
    pub fn build(corpus: &Corpus, embedder: E) -> Result<Self, RetrievalError> {
        if corpus.is_empty() {
            return Err(RetrievalError::Config("cannot index an empty corpus".into()));
        }
        let dim = embedder.dim();
        if dim == 0 {
            return Err(RetrievalError::Config("embedding dimension must be positive".into()));
        }
        let rows: Vec<Vec<f64>> = corpus
            .values()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|p| embedder.embed_passage(&p.text))
            .collect();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(RetrievalError::Config(format!(
                "embedder returned dimension {} (declared {dim})",
                bad.len()
            )));
        }
        Ok(DenseIndex {
            embedder,
            dim,
            ids: corpus.keys().cloned().collect(),
            vectors: rows.concat(),
        })
    }

    pub fn vector(&self, ordinal: usize) -> &[f64] {
        &self.vectors[ordinal * self.dim..(ordinal + 1) * self.dim]
    }

    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>, RetrievalError> {
        if query.len() != self.dim {
            return Err(RetrievalError::Config(format!(
                "query dimension {} does not match index dimension {}",
                query.len(),
                self.dim
            )));
        }
        Ok((0..self.ids.len()).map(|d| dot(self.vector(d), query)).collect())
    }

    pub fn dense_retrieve_topk(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError> {
        let q = self.embedder.embed_query(query);
        Ok(rank_documents(&self.ids, &self.scores(&q)?, k))
    }
}

impl<E: Embedder> Retriever for DenseIndex<E> {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError> {
        self.dense_retrieve_topk(query, k)
    }
}
